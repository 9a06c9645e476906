//! Parameterized blocks: affine maps, MLPs, the gated recurrent cell and attentive
//! message passing.

use std::rc::Rc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::map::Adjacency;
use crate::{Error, Result};

fn check_cols(tape: &Tape, x: Var, want: usize, what: &str) -> Result<()> {
    let (_, got) = tape.shape(x);
    if got != want {
        return Err(Error::Shape(format!("{what}: input has {got} columns, expected {want}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            w: store.weight(&format!("{name}.w"), fan_in, fan_out, rng)?,
            b: store.zeros(&format!("{name}.b"), 1, fan_out)?,
            fan_in,
            fan_out,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_cols(tape, x, self.fan_in, &self.name)?;
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        Ok(tape.add_row(y, b))
    }
}

/// Affine layers with tanh between them and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("mlp {name} needs at least two sizes")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, rng, &format!("{name}.{i}"), d[0], d[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn fan_in(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// The MLP applied to the row differences `x[dst[i]] − x[src[i]]`. The first affine
    /// layer is evaluated once per row of `x` and differenced afterwards.
    pub fn apply_pairwise(&self, tape: &mut Tape, x: Var, dst: Rc<[usize]>, src: Rc<[usize]>) -> Result<Var> {
        let first = &self.layers[0];
        check_cols(tape, x, first.fan_in, &first.name)?;
        let w = tape.param(first.w);
        let b = tape.param(first.b);
        let p = tape.matmul(x, w);
        let pd = tape.gather(p, dst);
        let ps = tape.gather(p, src);
        let d = tape.sub(pd, ps);
        let mut h = tape.add_row(d, b);
        for layer in &self.layers[1..] {
            h = tape.tanh(h);
            h = layer.apply(tape, h)?;
        }
        Ok(h)
    }
}

/// Gated recurrent cell with gates ordered (reset, update, candidate):
/// `r = σ(x Wr + h Ur + b)`, `z = σ(x Wz + h Uz + b)`, `n = tanh(x Wn + bn + r ⊙ (h Un + cn))`,
/// `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub name: String,
    pub wx: ParamId,
    pub uh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            wx: store.weight(&format!("{name}.wx"), input, 3 * hidden, rng)?,
            uh: store.weight(&format!("{name}.uh"), hidden, 3 * hidden, rng)?,
            bx: store.zeros(&format!("{name}.bx"), 1, 3 * hidden)?,
            bh: store.zeros(&format!("{name}.bh"), 1, 3 * hidden)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, tape: &mut Tape, h: Var, x: Var) -> Result<Var> {
        check_cols(tape, x, self.input, &format!("{} input", self.name))?;
        check_cols(tape, h, self.hidden, &format!("{} state", self.name))?;
        let (rows_h, rows_x) = (tape.shape(h).0, tape.shape(x).0);
        if rows_h != rows_x {
            return Err(Error::Shape(format!(
                "{}: state has {rows_h} rows, input has {rows_x}",
                self.name
            )));
        }
        let hd = self.hidden;
        let (wx, uh, bx, bh) = (tape.param(self.wx), tape.param(self.uh), tape.param(self.bx), tape.param(self.bh));
        let xw = tape.matmul(x, wx);
        let xw = tape.add_row(xw, bx);
        let hu = tape.matmul(h, uh);
        let hu = tape.add_row(hu, bh);
        let xr = tape.slice_cols(xw, 0, 2 * hd);
        let hr = tape.slice_cols(hu, 0, 2 * hd);
        let gates = tape.add(xr, hr);
        let gates = tape.sigmoid(gates);
        let r = tape.slice_cols(gates, 0, hd);
        let z = tape.slice_cols(gates, hd, hd);
        let xn = tape.slice_cols(xw, 2 * hd, hd);
        let hn = tape.slice_cols(hu, 2 * hd, hd);
        let rh = tape.mul(r, hn);
        let n = tape.add(xn, rh);
        let n = tape.tanh(n);
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        Ok(tape.add(n, zd))
    }
}

/// Directed message edges (`src → dst`) over `n` nodes; both directions are listed for
/// every undirected edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    pub n: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut src = Vec::with_capacity(2 * pairs.len());
        let mut dst = Vec::with_capacity(2 * pairs.len());
        for &(a, b) in pairs {
            src.extend([a, b]);
            dst.extend([b, a]);
        }
        Self {
            n,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn from_adjacency(adj: &Adjacency) -> Result<Self> {
        let n = adj.len();
        for i in 0..n {
            for j in 0..n {
                if adj.get(i, j) != adj.get(j, i) {
                    return Err(Error::Shape(format!("asymmetric adjacency at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_pairs(n, &adj.edges()))
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// One attentive propagation layer: messages `f(E_i − E_k)`, attention
/// `σ(g([E_i − E_k, B_i − B_k]))`, state update `GRU(E_i, Σ_k a_ik m_ik)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub f: Mlp,
    pub g: Mlp,
    pub gru: Gru,
    pub hidden: usize,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, hidden: usize) -> Result<Self> {
        Ok(Self {
            f: Mlp::new(store, rng, &format!("{name}.f"), &[hidden, hidden, hidden])?,
            g: Mlp::new(store, rng, &format!("{name}.g"), &[hidden + 1, hidden, 1])?,
            gru: Gru::new(store, rng, &format!("{name}.gru"), hidden, hidden)?,
            hidden,
        })
    }

    /// `mask` is an `n×1` column of the construction flags `B`.
    pub fn apply(&self, tape: &mut Tape, e: Var, edges: &EdgeIndex, mask: Var) -> Result<Var> {
        check_cols(tape, e, self.hidden, "gat state")?;
        let n = tape.shape(e).0;
        if n != edges.n || tape.shape(mask) != (n, 1) {
            return Err(Error::Shape(format!(
                "gat: {n} states, {} graph nodes, mask {:?}",
                edges.n,
                tape.shape(mask)
            )));
        }
        let agg = if edges.is_empty() {
            tape.constant(Array2::zeros((n, self.hidden)))
        } else {
            let m = self.f.apply_pairwise(tape, e, edges.dst.clone(), edges.src.clone())?;
            let eb = tape.concat_cols(&[e, mask]);
            let a = self.g.apply_pairwise(tape, eb, edges.dst.clone(), edges.src.clone())?;
            let a = tape.sigmoid(a);
            let msg = tape.mul_col(m, a);
            tape.scatter_add(msg, edges.dst.clone(), n)
        };
        self.gru.step(tape, e, agg)
    }
}

/// Evaluates an MLP on plain arrays.
pub fn mlp_apply(store: &ParamStore, mlp: &Mlp, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new(store);
    let xv = tape.constant(x.clone());
    let y = mlp.apply(&mut tape, xv)?;
    Ok(tape.value(y).clone())
}

pub fn gru_step(store: &ParamStore, gru: &Gru, h: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new(store);
    let hv = tape.constant(h.clone());
    let xv = tape.constant(x.clone());
    let y = gru.step(&mut tape, hv, xv)?;
    Ok(tape.value(y).clone())
}

/// One propagation round over an explicit adjacency; `mask[i]` is `B_i`.
pub fn gat_propagate(
    store: &ParamStore,
    layer: &GatLayer,
    e: &Array2<f64>,
    adj: &Adjacency,
    mask: &[bool],
) -> Result<Array2<f64>> {
    let edges = EdgeIndex::from_adjacency(adj)?;
    let mut tape = Tape::new(store);
    let ev = tape.constant(e.clone());
    let col = Array2::from_shape_fn((mask.len(), 1), |(i, _)| f64::from(u8::from(mask[i])));
    let mv = tape.constant(col);
    let y = layer.apply(&mut tape, ev, &edges, mv)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_weight_mlp_returns_bias() {
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(&mut store, &mut rng(), "m", &[3, 4, 2]).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        *store.value_mut(mlp.layers[1].b) = array![[0.25, -1.5]];
        let y = mlp_apply(&store, &mlp, &array![[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]]).unwrap();
        assert_eq!(y, array![[0.25, -1.5], [0.25, -1.5]]);
    }

    #[test]
    fn mlp_shape_mismatch_names_the_block() {
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(&mut store, &mut rng(), "head", &[3, 2]).unwrap();
        let err = mlp_apply(&store, &mlp, &array![[1.0, 2.0]]).unwrap_err();
        assert!(err.to_string().contains("head.0"), "{err}");
    }

    #[test]
    fn gru_zero_weights_blend_half_and_half() {
        // all gate pre-activations vanish, so r = z = 1/2, n = tanh(bn + cn / 2)
        let mut store = ParamStore::new(0);
        let gru = Gru::new(&mut store, &mut rng(), "g", 2, 2).unwrap();
        store.value_mut(gru.wx).fill(0.0);
        store.value_mut(gru.uh).fill(0.0);
        *store.value_mut(gru.bx) = array![[0.0, 0.0, 0.0, 0.0, 0.3, -0.2]];
        *store.value_mut(gru.bh) = array![[0.0, 0.0, 0.0, 0.0, 0.4, 0.6]];
        let h = array![[1.0, -2.0]];
        let y = gru_step(&store, &gru, &h, &array![[5.0, 7.0]]).unwrap();
        let n = [(0.3_f64 + 0.5 * 0.4).tanh(), (-0.2_f64 + 0.5 * 0.6).tanh()];
        let want = [0.5 * n[0] + 0.5 * 1.0, 0.5 * n[1] + 0.5 * -2.0];
        assert!((y[[0, 0]] - want[0]).abs() < 1e-15 && (y[[0, 1]] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn gru_matches_hand_formula_at_random_weights() {
        let mut store = ParamStore::new(0);
        let gru = Gru::new(&mut store, &mut rng(), "g", 1, 1).unwrap();
        *store.value_mut(gru.bx) = array![[0.1, -0.3, 0.2]];
        *store.value_mut(gru.bh) = array![[0.05, 0.4, -0.1]];
        let (wx, uh) = (store.value(gru.wx).clone(), store.value(gru.uh).clone());
        let (bx, bh) = (store.value(gru.bx).clone(), store.value(gru.bh).clone());
        let (h, x) = (0.7, -1.2);
        let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
        let r = sig(x * wx[[0, 0]] + bx[[0, 0]] + h * uh[[0, 0]] + bh[[0, 0]]);
        let z = sig(x * wx[[0, 1]] + bx[[0, 1]] + h * uh[[0, 1]] + bh[[0, 1]]);
        let n = (x * wx[[0, 2]] + bx[[0, 2]] + r * (h * uh[[0, 2]] + bh[[0, 2]])).tanh();
        let want = (1.0 - z) * n + z * h;
        let y = gru_step(&store, &gru, &array![[h]], &array![[x]]).unwrap();
        assert!((y[[0, 0]] - want).abs() < 1e-14);
    }

    #[test]
    fn isolated_node_gets_zero_aggregate() {
        let mut store = ParamStore::new(0);
        let layer = GatLayer::new(&mut store, &mut rng(), "l", 3).unwrap();
        let e = array![[0.1, -0.2, 0.3]];
        let out = gat_propagate(&store, &layer, &e, &Adjacency::new(1), &[true]).unwrap();
        let direct = gru_step(&store, &layer.gru, &e, &Array2::zeros((1, 3))).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn identical_pair_updates_identically() {
        let mut store = ParamStore::new(0);
        let layer = GatLayer::new(&mut store, &mut rng(), "l", 4).unwrap();
        let e = array![[0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4]];
        let adj = Adjacency::from_edges(2, &[(0, 1)]);
        let out = gat_propagate(&store, &layer, &e, &adj, &[false, false]).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let mut store = ParamStore::new(0);
        let layer = GatLayer::new(&mut store, &mut rng(), "l", 2).unwrap();
        let mut adj = Adjacency::new(2);
        adj.set(0, 1, true);
        let e = Array2::zeros((2, 2));
        assert!(gat_propagate(&store, &layer, &e, &adj, &[false, false]).is_err());
    }

    #[test]
    fn propagation_is_permutation_equivariant() {
        let mut r = rng();
        let mut store = ParamStore::new(0);
        let layer = GatLayer::new(&mut store, &mut r, "l", 5).unwrap();
        for _ in 0..5 {
            let n = 6;
            let mut adj = Adjacency::new(n);
            for i in 0..n {
                for j in i + 1..n {
                    if r.gen_bool(0.4) {
                        adj.connect(i, j);
                    }
                }
            }
            let e = Array2::from_shape_simple_fn((n, 5), || r.gen_range(-1.0..1.0));
            let mask: Vec<bool> = (0..n).map(|i| i == n - 1).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, r.gen_range(0..=i));
            }
            // node i is relabeled perm[i]
            let mut pe = Array2::zeros((n, 5));
            let mut pmask = vec![false; n];
            for i in 0..n {
                pe.row_mut(perm[i]).assign(&e.row(i));
                pmask[perm[i]] = mask[i];
            }
            let out = gat_propagate(&store, &layer, &e, &adj, &mask).unwrap();
            let mut inv = vec![0; n];
            for i in 0..n {
                inv[perm[i]] = i;
            }
            let pout = gat_propagate(&store, &layer, &pe, &adj.permuted(&inv), &pmask).unwrap();
            for i in 0..n {
                for c in 0..5 {
                    assert!((out[[i, c]] - pout[[perm[i], c]]).abs() < 1e-12);
                }
            }
        }
    }
}
