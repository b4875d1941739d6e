//! Batched forward pass of the interpolating operator.
//!
//! Node set = the input discretization (first `n_in` rows of the full
//! graph's query list) plus all extra query points. Layer 0 lifts the raw
//! vols at input points and propagates them to every node through the
//! kernel mean alone — no local term, so nothing about the input function
//! is needed at query points. Later layers mix a local linear path with
//! the kernel mean. All per-edge kernel-net evaluations are batched into
//! dense matrix products and processed in chunks to bound memory.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::ffn::{gelu, FfnCache};
use super::graph::{build_graph, NeighborGraph};
use super::model::GnoModel;
use super::GnoError;
use crate::market_data::SurfaceSnapshot;

pub(crate) const EDGE_CHUNK: usize = 32_768;

/// Numerically stable `ln(1 + e^q)`.
pub fn softplus(q: f64) -> f64 {
    q.max(0.0) + (-q.abs()).exp().ln_1p()
}

/// Softplus derivative: the logistic sigmoid.
pub fn sigmoid(q: f64) -> f64 {
    if q >= 0.0 {
        1.0 / (1.0 + (-q).exp())
    } else {
        let e = q.exp();
        e / (1.0 + e)
    }
}

/// Edge list in CSR form: edges of node `y` are
/// `edge_dst[node_offsets[y]..node_offsets[y+1]]`, each an input index.
#[derive(Debug, Clone)]
pub struct Edges {
    pub node_offsets: Vec<usize>,
    pub edge_src: Vec<u32>,
    pub edge_dst: Vec<u32>,
}

impl Edges {
    fn from_graph(graph: &NeighborGraph) -> Self {
        let mut node_offsets = Vec::with_capacity(graph.len() + 1);
        let mut edge_src = Vec::with_capacity(graph.edge_count());
        let mut edge_dst = Vec::with_capacity(graph.edge_count());
        node_offsets.push(0);
        for (y, neigh) in graph.neighbors.iter().enumerate() {
            for &x in neigh {
                edge_src.push(y as u32);
                edge_dst.push(x);
            }
            node_offsets.push(edge_dst.len());
        }
        Edges { node_offsets, edge_src, edge_dst }
    }

    pub fn len(&self) -> usize {
        self.edge_dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_dst.is_empty()
    }

    fn degree(&self, y: usize) -> f64 {
        (self.node_offsets[y + 1] - self.node_offsets[y]) as f64
    }
}

/// Everything the backward pass needs. Kernel-net intermediates are
/// recomputed per chunk rather than stored.
pub struct Tape {
    pub coords: Vec<[f64; 2]>,
    pub v_in: Vec<f64>,
    pub n_in: usize,
    pub edges: Edges,
    /// Lift outputs `h̃ⱼ`; row count is `n_in` for `j = 0`, else `n_nodes`.
    pub h_tilde: Vec<Array2<f64>>,
    /// Pre-activations `tⱼ` with `h_{j+1} = GELU(tⱼ)`, `n_nodes × c`.
    pub pre: Vec<Array2<f64>>,
    /// Hidden states `hⱼ` for `j = 1..J`, `n_nodes × c`.
    pub h: Vec<Array2<f64>>,
    pub lift_caches: Vec<FfnCache>,
    pub proj_cache: FfnCache,
    /// Pre-Softplus projection outputs.
    pub q: Array1<f64>,
    pub params_fingerprint: u64,
}

pub struct ForwardOutput {
    /// Vols at every `graph_all` query point (inputs first).
    pub vols: Vec<f64>,
    /// Instrumented kernel-net evaluation count, `Σ_layers Σ_y |N(y)|`.
    pub kernel_evals: usize,
    pub tape: Tape,
}

pub(crate) fn fingerprint(params: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in params {
        h ^= p.to_bits();
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h ^ params.len() as u64
}

fn coords_match(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p == q)
}

/// Per-chunk kernel message computation: evaluates the kernel net on edge
/// features and contracts the matrix part with `h̃ⱼ(x)`.
/// Returns the per-edge messages `κ^W·h̃(x) + κ^b` (`chunk × c`).
pub(crate) fn kernel_messages(
    model: &GnoModel,
    layer: usize,
    u: ArrayView2<f64>,
    h_src: ArrayView2<f64>,
) -> Result<(FfnCache, Array2<f64>), GnoError> {
    let c = model.config.channels;
    let (off, ffn) = &model.layout.kernels[layer];
    let cache = ffn.forward(&model.params[*off..off + ffn.param_len], u)?;
    let out = cache.output();
    let n = u.nrows();
    let mut msg = Array2::zeros((n, c));
    for i in 0..c {
        let mut col = msg.column_mut(i);
        for k in 0..c {
            let w = out.column(i * c + k);
            let h = h_src.column(k);
            for ((m, &wv), &hv) in col.iter_mut().zip(w).zip(h) {
                *m += wv * hv;
            }
        }
        let b = out.column(c * c + i);
        for (m, &bv) in col.iter_mut().zip(b) {
            *m += bv;
        }
    }
    Ok((cache, msg))
}

/// Assemble kernel-net inputs `(ρ_y, z_y, ρ_x, z_x, h̃ⱼ(x), v(x))` and the
/// gathered source states for an edge range.
pub(crate) fn edge_features(
    tape_coords: &[[f64; 2]],
    v_in: &[f64],
    edges: &Edges,
    h_tilde: &Array2<f64>,
    range: std::ops::Range<usize>,
) -> (Array2<f64>, Array2<f64>) {
    let c = h_tilde.ncols();
    let n = range.len();
    let mut u = Array2::zeros((n, 5 + c));
    let mut h_src = Array2::zeros((n, c));
    for (row, e) in range.enumerate() {
        let y = edges.edge_src[e] as usize;
        let x = edges.edge_dst[e] as usize;
        u[[row, 0]] = tape_coords[y][0];
        u[[row, 1]] = tape_coords[y][1];
        u[[row, 2]] = tape_coords[x][0];
        u[[row, 3]] = tape_coords[x][1];
        for k in 0..c {
            let v = h_tilde[[x, k]];
            u[[row, 4 + k]] = v;
            h_src[[row, k]] = v;
        }
        u[[row, 4 + c]] = v_in[x];
    }
    (u, h_src)
}

/// Evaluate the operator at every query point of `graph_all`.
///
/// `graph_in` is the self-graph over the input discretization and must be
/// the prefix of `graph_all` (the full graph over inputs ∪ extra queries,
/// inputs first); neighbor indices always point into the inputs.
pub fn gno_forward(
    model: &GnoModel,
    snapshot: &SurfaceSnapshot,
    graph_in: &NeighborGraph,
    graph_all: &NeighborGraph,
) -> Result<ForwardOutput, GnoError> {
    let coords_in = snapshot.coords();
    let v_in = snapshot.vols();
    let n_in = coords_in.len();
    if !coords_match(&graph_in.out_coords, &coords_in) {
        return Err(GnoError::GraphMismatch(
            "input graph coords differ from snapshot".into(),
        ));
    }
    if graph_all.len() < n_in
        || !coords_match(&graph_all.out_coords[..n_in], &coords_in)
        || graph_all.neighbors[..n_in] != graph_in.neighbors[..]
    {
        return Err(GnoError::GraphMismatch(
            "full graph does not start with the input graph".into(),
        ));
    }
    if let Some(&bad) = graph_all
        .neighbors
        .iter()
        .flatten()
        .find(|&&x| x as usize >= n_in)
    {
        return Err(GnoError::GraphMismatch(format!(
            "neighbor index {bad} out of input range {n_in}"
        )));
    }
    forward_inner(
        model,
        graph_all.out_coords.clone(),
        v_in,
        n_in,
        Edges::from_graph(graph_all),
        EDGE_CHUNK,
    )
}

pub(crate) fn forward_inner(
    model: &GnoModel,
    coords: Vec<[f64; 2]>,
    v_in: Vec<f64>,
    n_in: usize,
    edges: Edges,
    chunk: usize,
) -> Result<ForwardOutput, GnoError> {
    let config = &model.config;
    config.validate()?;
    let c = config.channels;
    let n_nodes = coords.len();
    let n_edges = edges.len();
    let params = &model.params;

    let mut h_tilde = Vec::with_capacity(config.layers);
    let mut pre = Vec::with_capacity(config.layers);
    let mut h: Vec<Array2<f64>> = Vec::with_capacity(config.layers);
    let mut lift_caches = Vec::with_capacity(config.layers);

    for j in 0..config.layers {
        // lift: v(x) for j = 0 (inputs only), h_j everywhere otherwise
        let (off, lift) = &model.layout.lifts[j];
        let lift_params = &params[*off..off + lift.param_len];
        let cache = if j == 0 {
            let x = ArrayView2::from_shape((n_in, 1), &v_in).unwrap();
            lift.forward(lift_params, x)?
        } else {
            lift.forward(lift_params, h[j - 1].view())?
        };
        let ht = cache.output().clone();
        lift_caches.push(cache);

        // aggregated kernel messages, mean over in-neighbors
        let mut agg: Array2<f64> = Array2::zeros((n_nodes, c));
        let mut start = 0;
        while start < n_edges {
            let end = (start + chunk).min(n_edges);
            let (u, h_src) = edge_features(&coords, &v_in, &edges, &ht, start..end);
            let (_, msg) = kernel_messages(model, j, u.view(), h_src.view())?;
            for (row, e) in (start..end).enumerate() {
                let y = edges.edge_src[e] as usize;
                let mut dst = agg.row_mut(y);
                for (d, &m) in dst.iter_mut().zip(msg.row(row)) {
                    *d += m;
                }
            }
            start = end;
        }
        for y in 0..n_nodes {
            let deg = edges.degree(y);
            agg.row_mut(y).mapv_inplace(|v| v / deg);
        }

        // pre-activation: local path + kernel mean + constant bias
        let b_off = model.layout.biases[j];
        let bias = &params[b_off..b_off + c];
        let mut t = agg;
        if let Some(w_off) = model.layout.locals[j] {
            let w = ArrayView2::from_shape((c, c), &params[w_off..w_off + c * c]).unwrap();
            t += &ht.dot(&w.t());
        }
        for mut row in t.rows_mut() {
            for (tv, bv) in row.iter_mut().zip(bias) {
                *tv += bv;
            }
        }
        h.push(t.mapv(gelu));
        h_tilde.push(ht);
        pre.push(t);
    }

    let (off, proj) = &model.layout.projection;
    let proj_cache = proj.forward(&params[*off..off + proj.param_len], h.last().unwrap().view())?;
    let q = proj_cache.output().index_axis(Axis(1), 0).to_owned();
    let vols = q.iter().map(|&qi| softplus(qi)).collect();

    Ok(ForwardOutput {
        vols,
        kernel_evals: config.layers * n_edges,
        tape: Tape {
            coords,
            v_in,
            n_in,
            edges,
            h_tilde,
            pre,
            h,
            lift_caches,
            proj_cache,
            q,
            params_fingerprint: fingerprint(params),
        },
    })
}


/// Evaluate the operator at arbitrary query points, building the graphs
/// from the snapshot's discretization. Returns vols aligned with `queries`.
pub fn gno_eval(
    model: &GnoModel,
    snapshot: &SurfaceSnapshot,
    queries: &[[f64; 2]],
) -> Result<Vec<f64>, GnoError> {
    let pi_in = snapshot.coords();
    let mut all = pi_in.clone();
    all.extend_from_slice(queries);
    let graph_in =
        build_graph(&pi_in, &pi_in, model.config.rho_bar, model.config.neighbor_cap)?;
    let graph_all = build_graph(&pi_in, &all, model.config.rho_bar, model.config.neighbor_cap)?;
    let out = gno_forward(model, snapshot, &graph_in, &graph_all)?;
    Ok(out.vols[pi_in.len()..].to_vec())
}

/// [`SurfaceEval`] adapter for a trained model applied to one snapshot.
/// Unevaluable points (no in-neighbors within the truncation radius)
/// surface as NaN so validation reports them instead of panicking.
pub struct GnoSurface<'a> {
    pub model: &'a GnoModel,
    pub snapshot: &'a SurfaceSnapshot,
}

impl crate::arbitrage::SurfaceEval for GnoSurface<'_> {
    fn eval_batch(&self, points: &[[f64; 2]]) -> Vec<f64> {
        gno_eval(self.model, self.snapshot, points)
            .unwrap_or_else(|_| vec![f64::NAN; points.len()])
    }
}
