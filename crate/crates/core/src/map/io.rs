//! JSON map files.
//!
//! Plain maps: `{"fov_m", "nodes": [[x,y],..], "edges": [[i,j],..], "lanes": [{"path": [..], "traffic_light": bool}]}`.
//! Hierarchical maps carry the same plain fields (the flattened graph) plus
//! `"global_nodes"`, `"global_adj"` (edge list), `"local_paths": {"i-j": {"coords", "mask"}}`,
//! `"semantics": {"i-j": bool}`, `"W"` and `"order"`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{chains, flatten, Adjacency, EdgeKey, HierGraph, LocalPath, PlainGraph, Point};
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaneJson {
    pub path: Vec<usize>,
    pub traffic_light: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalPathJson {
    pub coords: Vec<Point>,
    pub mask: Vec<u8>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapJson {
    pub fov_m: f64,
    pub nodes: Vec<Point>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanes: Option<Vec<LaneJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_nodes: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_adj: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_paths: Option<BTreeMap<String, LocalPathJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<BTreeMap<String, bool>>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

/// A parsed map file.
#[derive(Clone, Debug, PartialEq)]
pub enum MapDoc {
    Plain(PlainGraph),
    Hier(HierGraph),
}

impl MapDoc {
    /// The plain-graph view (flattening hierarchical maps).
    pub fn to_plain(&self) -> Result<PlainGraph> {
        match self {
            MapDoc::Plain(g) => Ok(g.clone()),
            MapDoc::Hier(h) => flatten(h),
        }
    }

    pub fn fov_m(&self) -> f64 {
        match self {
            MapDoc::Plain(g) => g.fov_m,
            MapDoc::Hier(h) => h.fov_m,
        }
    }
}

/// Lanes as chains between key points, further split where the traffic-light flag changes.
fn lanes_of(g: &PlainGraph) -> Vec<LaneJson> {
    let mut lanes = Vec::new();
    for chain in chains(g) {
        let mut path = vec![chain.nodes[0]];
        let mut flag = g.traffic_light[chain.edges[0]];
        for (i, &e) in chain.edges.iter().enumerate() {
            if g.traffic_light[e] != flag {
                lanes.push(LaneJson {
                    path: std::mem::replace(&mut path, vec![chain.nodes[i]]),
                    traffic_light: flag,
                });
                flag = g.traffic_light[e];
            }
            path.push(chain.nodes[i + 1]);
        }
        lanes.push(LaneJson {
            path,
            traffic_light: flag,
        });
    }
    lanes
}

fn plain_json(g: &PlainGraph) -> MapJson {
    MapJson {
        fov_m: g.fov_m,
        nodes: g.nodes.clone(),
        edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        lanes: Some(lanes_of(g)),
        global_nodes: None,
        global_adj: None,
        local_paths: None,
        semantics: None,
        w: None,
        order: None,
    }
}

pub fn plain_to_json(g: &PlainGraph) -> String {
    serde_json::to_string(&plain_json(g)).expect("map serialization is infallible")
}

pub fn hier_to_json(h: &HierGraph) -> Result<String> {
    let mut doc = plain_json(&flatten(h)?);
    doc.global_nodes = Some(h.global_nodes.clone());
    doc.global_adj = Some(h.global_adj.edges().into_iter().map(|(a, b)| [a, b]).collect());
    doc.local_paths = Some(
        h.local_paths
            .iter()
            .map(|(e, p)| {
                let json = LocalPathJson {
                    coords: p.coords.clone(),
                    mask: p.mask.iter().map(|&m| u8::from(m)).collect(),
                };
                (e.to_string(), json)
            })
            .collect(),
    );
    doc.semantics = Some(h.semantics.iter().map(|(e, &v)| (e.to_string(), v)).collect());
    doc.w = Some(h.w);
    doc.order = Some(h.order.clone());
    Ok(serde_json::to_string(&doc)?)
}

fn parse_key(s: &str) -> Result<EdgeKey> {
    let bad = || Error::Dataset(format!("bad edge key {s:?}, expected \"i-j\""));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok(EdgeKey::new(
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn plain_from_json(doc: &MapJson) -> PlainGraph {
    let mut edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
    let mut lights = vec![false; edges.len()];
    let mut index: HashMap<EdgeKey, usize> = HashMap::new();
    for (i, &(a, b)) in edges.iter().enumerate() {
        index.entry(EdgeKey::new(a, b)).or_insert(i);
    }
    for lane in doc.lanes.iter().flatten() {
        for pair in lane.path.windows(2) {
            let key = EdgeKey::new(pair[0], pair[1]);
            let e = *index.entry(key).or_insert_with(|| {
                edges.push((pair[0], pair[1]));
                lights.push(false);
                edges.len() - 1
            });
            lights[e] |= lane.traffic_light;
        }
    }
    PlainGraph {
        fov_m: doc.fov_m,
        nodes: doc.nodes.clone(),
        edges,
        traffic_light: lights,
    }
}

fn hier_from_json(doc: &MapJson, global_nodes: &[Point]) -> Result<HierGraph> {
    let n = global_nodes.len();
    let w = doc
        .w
        .ok_or_else(|| Error::Dataset("hierarchical map without \"W\"".into()))?;
    let mut adj = Adjacency::new(n);
    for e in doc.global_adj.iter().flatten() {
        if e[0] >= n || e[1] >= n {
            return Err(Error::Dataset(format!("global edge {e:?} out of range")));
        }
        adj.connect(e[0], e[1]);
    }
    let mut local_paths = BTreeMap::new();
    for (k, p) in doc.local_paths.iter().flatten() {
        local_paths.insert(
            parse_key(k)?,
            LocalPath {
                coords: p.coords.clone(),
                mask: p.mask.iter().map(|&m| m != 0).collect(),
            },
        );
    }
    let mut semantics = BTreeMap::new();
    for (k, &v) in doc.semantics.iter().flatten() {
        semantics.insert(parse_key(k)?, v);
    }
    Ok(HierGraph {
        fov_m: doc.fov_m,
        global_nodes: global_nodes.to_vec(),
        global_adj: adj,
        local_paths,
        semantics,
        w,
        order: doc.order.clone().unwrap_or_else(|| (0..n).collect()),
    })
}

pub fn parse_map(text: &str) -> Result<MapDoc> {
    let doc: MapJson = serde_json::from_str(text)?;
    match &doc.global_nodes {
        Some(g) => Ok(MapDoc::Hier(hier_from_json(&doc, g)?)),
        None => Ok(MapDoc::Plain(plain_from_json(&doc))),
    }
}

pub fn read_map(path: impl AsRef<Path>) -> Result<MapDoc> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_map(&text)
}

pub fn write_plain(path: impl AsRef<Path>, g: &PlainGraph) -> Result<()> {
    std::fs::write(path, plain_to_json(g) + "\n")?;
    Ok(())
}

pub fn write_hier(path: impl AsRef<Path>, h: &HierGraph) -> Result<()> {
    std::fs::write(path, hier_to_json(h)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_round_trip_keeps_lights() {
        let mut g = PlainGraph::new(
            50.0,
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.5], [3.0, 0.0]],
            vec![(0, 1), (1, 2), (2, 3)],
        );
        g.traffic_light[2] = true;
        let back = parse_map(&plain_to_json(&g)).unwrap();
        assert_eq!(back, MapDoc::Plain(g));
    }

    #[test]
    fn lanes_add_missing_edges() {
        let text = r#"{"fov_m": 10, "nodes": [[0,0],[1,0],[2,0]], "edges": [[0,1]],
                      "lanes": [{"path": [0,1,2], "traffic_light": true}]}"#;
        let MapDoc::Plain(g) = parse_map(text).unwrap() else {
            panic!("expected plain map")
        };
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.traffic_light, vec![true, true]);
    }

    #[test]
    fn hier_round_trip() {
        let mut local_paths = BTreeMap::new();
        local_paths.insert(EdgeKey(0, 1), LocalPath::from_points(&[[1.0, 1.0]], 3));
        let mut semantics = BTreeMap::new();
        semantics.insert(EdgeKey(0, 1), true);
        let h = HierGraph {
            fov_m: 20.0,
            global_nodes: vec![[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]],
            global_adj: Adjacency::from_edges(3, &[(0, 1), (1, 2)]),
            local_paths,
            semantics,
            w: 3,
            order: vec![2, 1, 0],
        };
        let text = hier_to_json(&h).unwrap();
        assert!(text.contains("\"0-1\""));
        assert_eq!(parse_map(&text).unwrap(), MapDoc::Hier(h));
    }

    #[test]
    fn bad_key_is_an_error() {
        assert!(parse_key("3_4").is_err());
        assert_eq!(parse_key("4-3").unwrap(), EdgeKey(3, 4));
    }
}
