//! SVG 1.1 drawings of maps.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::map::io::MapDoc;
use crate::map::{key_points, validate, HierGraph, PlainGraph, Point};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Width and height of the drawing area, px.
    pub size_px: f64,
    pub lane_color: String,
    pub light_color: String,
    pub node_color: String,
    pub legend: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            size_px: 512.0,
            lane_color: "#3b5b92".into(),
            light_color: "#d6452f".into(),
            node_color: "#222222".into(),
            legend: true,
        }
    }
}

/// Space below the map for the legend and scale bar, px.
const FOOTER_PX: f64 = 40.0;

struct Canvas<'a> {
    out: String,
    fov: f64,
    opts: &'a RenderOptions,
}

impl Canvas<'_> {
    fn xy(&self, p: Point) -> (f64, f64) {
        let s = self.opts.size_px / self.fov;
        (p[0] * s, self.opts.size_px - p[1] * s)
    }

    fn lane(&mut self, pts: &[Point], light: bool) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.xy(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let class = if light { "lane tl" } else { "lane" };
        let _ = writeln!(self.out, r#"<polyline class="{class}" points="{}"/>"#, coords.join(" "));
    }

    fn node(&mut self, p: Point) {
        let (x, y) = self.xy(p);
        let _ = writeln!(self.out, r#"<circle class="node" cx="{x:.2}" cy="{y:.2}" r="2.5"/>"#);
    }
}

fn header(fov: f64, opts: &RenderOptions) -> String {
    let (w, h) = (opts.size_px, opts.size_px + if opts.legend { FOOTER_PX } else { 0.0 });
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(
        s,
        "<style>.lane{{fill:none;stroke:{};stroke-width:1.5}} .tl{{stroke:{}}} .node{{fill:{}}} text{{font:11px sans-serif}}</style>",
        opts.lane_color, opts.light_color, opts.node_color
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.0}" height="{:.0}" fill="white" stroke="#999999"/>"##, opts.size_px);
    let _ = writeln!(s, "<!-- fov {fov} m -->");
    s
}

fn footer(c: &mut Canvas) {
    if c.opts.legend {
        let y = c.opts.size_px + 14.0;
        // Scale bar of a round length near a fifth of the fov.
        let target = c.fov / 5.0;
        let mag = 10f64.powf(target.log10().floor());
        let bar_m = [5.0, 2.0, 1.0].into_iter().map(|k| k * mag).find(|&b| b <= target).unwrap_or(mag);
        let bar_px = bar_m * c.opts.size_px / c.fov;
        let _ = writeln!(
            c.out,
            r#"<line x1="8" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="2"/>"#,
            8.0 + bar_px
        );
        let _ = writeln!(c.out, r#"<text x="8" y="{:.2}">{bar_m} m</text>"#, y + 16.0);
        let lx = c.opts.size_px - 220.0;
        let _ = writeln!(
            c.out,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            c.opts.lane_color
        );
        let _ = writeln!(c.out, r#"<text x="{:.2}" y="{:.2}">lane</text>"#, lx + 24.0, y + 4.0);
        let _ = writeln!(
            c.out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 70.0,
            lx + 90.0,
            c.opts.light_color
        );
        let _ = writeln!(c.out, r#"<text x="{:.2}" y="{:.2}">traffic light</text>"#, lx + 94.0, y + 4.0);
    }
    c.out.push_str("</svg>\n");
}

/// Global edges as polylines through their valid local points, global nodes as dots.
pub fn render_hier(h: &HierGraph, opts: &RenderOptions) -> Result<String> {
    validate(h).into_result()?;
    let mut c = Canvas {
        out: header(h.fov_m, opts),
        fov: h.fov_m,
        opts,
    };
    for e in h.edges() {
        let (s, t) = h.oriented(e);
        let mut pts = vec![h.global_nodes[s]];
        if let Some(p) = h.local_paths.get(&e) {
            pts.extend(p.valid_points());
        }
        pts.push(h.global_nodes[t]);
        c.lane(&pts, h.semantics.get(&e).copied().unwrap_or(false));
    }
    for &p in &h.global_nodes {
        c.node(p);
    }
    footer(&mut c);
    Ok(c.out)
}

/// Each edge as a segment, key points as dots.
pub fn render_plain(g: &PlainGraph, opts: &RenderOptions) -> Result<String> {
    validate(g).into_result()?;
    let mut c = Canvas {
        out: header(g.fov_m, opts),
        fov: g.fov_m,
        opts,
    };
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        c.lane(&[g.nodes[a], g.nodes[b]], g.traffic_light[e]);
    }
    for k in key_points(g) {
        c.node(g.nodes[k]);
    }
    footer(&mut c);
    Ok(c.out)
}

pub fn render(doc: &MapDoc, opts: &RenderOptions) -> Result<String> {
    match doc {
        MapDoc::Plain(g) => render_plain(g, opts),
        MapDoc::Hier(h) => render_hier(h, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{build_hierarchical, PatchConfig};

    fn crossing() -> PlainGraph {
        let mut g = PlainGraph::new(
            100.0,
            vec![[50.0, 50.0], [10.0, 50.0], [90.0, 50.0], [50.0, 10.0], [60.0, 80.0], [50.0, 95.0]],
            vec![(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)],
        );
        g.traffic_light = vec![true, false, true, false, false];
        g
    }

    #[test]
    fn dots_only_without_edges() {
        let g = PlainGraph::new(100.0, vec![[10.0, 10.0], [80.0, 30.0]], vec![]);
        let svg = render_plain(&g, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(svg.starts_with("<?xml") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn one_highlight_per_flagged_edge() {
        let g = crossing();
        let svg = render_plain(&g, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches(r#"class="lane tl""#).count(), 2);
        let h = build_hierarchical(&g, &PatchConfig::new(100.0, 0.0, 4)).unwrap();
        let flagged = h.semantics.values().filter(|&&f| f).count();
        let svg = render_hier(&h, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches(r#"class="lane tl""#).count(), flagged);
        assert_eq!(svg.matches("<polyline").count(), h.global_adj.edge_count());
        assert_eq!(svg.matches("<circle").count(), h.node_count());
    }

    #[test]
    fn output_is_deterministic() {
        let g = crossing();
        let a = render_plain(&g, &RenderOptions::default()).unwrap();
        let b = render_plain(&g.clone(), &RenderOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_map_is_rejected() {
        let g = PlainGraph::new(100.0, vec![[10.0, 10.0], [80.0, 30.0]], vec![(0, 1), (1, 1)]);
        assert!(render_plain(&g, &RenderOptions::default()).unwrap_err().is_validation());
    }

    #[test]
    fn y_axis_points_up() {
        let g = PlainGraph::new(100.0, vec![[0.0, 0.0], [0.0, 100.0]], vec![(0, 1)]);
        let svg = render_plain(&g, &RenderOptions::default()).unwrap();
        assert!(svg.contains(r#"points="0.00,512.00 0.00,0.00""#));
    }
}
