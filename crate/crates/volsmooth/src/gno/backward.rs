//! Exact reverse-mode gradients for every operator parameter.
//!
//! Walks the forward tape backwards: Softplus and projection first, then
//! per layer the GELU, the constant bias, the local linear path, the
//! kernel mean (whose per-edge nets are re-evaluated chunk-wise rather
//! than stored), and finally the lift. Hidden states `h̃ⱼ` receive
//! gradients from three places — the local path, the kernel-net input
//! slot, and the matrix-vector product with the kernel output — all
//! accumulated in deterministic edge order.

use ndarray::{Array2, ArrayView2};

use super::ffn::gelu_prime;
use super::forward::{edge_features, fingerprint, kernel_messages, sigmoid, Tape, EDGE_CHUNK};
use super::model::{GnoModel, GradientRecord};
use super::GnoError;

/// Gradient of a scalar loss w.r.t. all model parameters, given the
/// loss gradient `upstream` at every query point of the forward pass.
pub fn gno_backward(
    model: &GnoModel,
    tape: &Tape,
    upstream: &[f64],
) -> Result<GradientRecord, GnoError> {
    let n_nodes = tape.coords.len();
    if upstream.len() != n_nodes {
        return Err(GnoError::ShapeError { got: upstream.len(), want: n_nodes });
    }
    if tape.params_fingerprint != fingerprint(&model.params) {
        return Err(GnoError::StaleTape);
    }
    let config = &model.config;
    let c = config.channels;
    let params = &model.params;
    let mut grad = GradientRecord::zeros(model);

    // Softplus and projection
    let mut dq: Array2<f64> = Array2::zeros((n_nodes, 1));
    for (i, (&up, &q)) in upstream.iter().zip(tape.q.iter()).enumerate() {
        dq[[i, 0]] = up * sigmoid(q);
    }
    let (off, proj) = &model.layout.projection;
    let mut dh = proj.backward(
        &params[*off..off + proj.param_len],
        &tape.proj_cache,
        dq.view(),
        &mut grad.values[*off..off + proj.param_len],
    );

    for j in (0..config.layers).rev() {
        // dh is the gradient w.r.t. h_{j+1} = GELU(pre_j)
        let mut dpre = dh;
        dpre.zip_mut_with(&tape.pre[j], |d, &t| *d *= gelu_prime(t));

        let b_off = model.layout.biases[j];
        for row in dpre.rows() {
            for (g, &d) in grad.values[b_off..b_off + c].iter_mut().zip(row) {
                *g += d;
            }
        }

        let ht = &tape.h_tilde[j];
        let mut dht: Array2<f64> = Array2::zeros(ht.raw_dim());
        if let Some(w_off) = model.layout.locals[j] {
            let w = ArrayView2::from_shape((c, c), &params[w_off..w_off + c * c]).unwrap();
            let dw = dpre.t().dot(ht);
            for (g, &d) in grad.values[w_off..w_off + c * c].iter_mut().zip(dw.iter()) {
                *g += d;
            }
            dht += &dpre.dot(&w);
        }

        // kernel mean path, chunked re-evaluation
        let edges = &tape.edges;
        let n_edges = edges.len();
        let (k_off, kernel) = &model.layout.kernels[j];
        let mut start = 0;
        while start < n_edges {
            let end = (start + EDGE_CHUNK).min(n_edges);
            let m = end - start;
            let (u, h_src) = edge_features(&tape.coords, &tape.v_in, edges, ht, start..end);
            let (cache, _) = kernel_messages(model, j, u.view(), h_src.view())?;
            let k_out = cache.output();

            // per-edge message gradient: dpre(y)/deg(y)
            let mut dmsg: Array2<f64> = Array2::zeros((m, c));
            for (row, e) in (start..end).enumerate() {
                let y = edges.edge_src[e] as usize;
                let deg = (edges.node_offsets[y + 1] - edges.node_offsets[y]) as f64;
                for (d, &p) in dmsg.row_mut(row).iter_mut().zip(dpre.row(y)) {
                    *d = p / deg;
                }
            }

            // gradient w.r.t. kernel-net output: matrix slots get
            // dmsg_i · h̃(x)_k, bias slots get dmsg_i
            let mut dk: Array2<f64> = Array2::zeros((m, c * c + c));
            for i in 0..c {
                for k in 0..c {
                    let mut col = dk.column_mut(i * c + k);
                    for ((d, &dm), &hv) in
                        col.iter_mut().zip(dmsg.column(i)).zip(h_src.column(k))
                    {
                        *d = dm * hv;
                    }
                }
                dk.column_mut(c * c + i).assign(&dmsg.column(i));
            }
            let du = kernel.backward(
                &params[*k_off..k_off + kernel.param_len],
                &cache,
                dk.view(),
                &mut grad.values[*k_off..k_off + kernel.param_len],
            );

            // gradient into h̃ⱼ(x): matvec path plus kernel-input slot
            let mut dhsrc: Array2<f64> = Array2::zeros((m, c));
            for k in 0..c {
                let mut col = dhsrc.column_mut(k);
                for i in 0..c {
                    let kw = k_out.column(i * c + k);
                    for ((d, &dm), &wv) in col.iter_mut().zip(dmsg.column(i)).zip(kw) {
                        *d += dm * wv;
                    }
                }
                let slot = du.column(4 + k);
                for (d, &s) in col.iter_mut().zip(slot) {
                    *d += s;
                }
            }
            for (row, e) in (start..end).enumerate() {
                let x = edges.edge_dst[e] as usize;
                for (g, &d) in dht.row_mut(x).iter_mut().zip(dhsrc.row(row)) {
                    *g += d;
                }
            }
            start = end;
        }

        // lift backward; for j = 0 the input is raw data, gradient dropped
        let (off, lift) = &model.layout.lifts[j];
        let dinput = lift.backward(
            &params[*off..off + lift.param_len],
            &tape.lift_caches[j],
            dht.view(),
            &mut grad.values[*off..off + lift.param_len],
        );
        dh = dinput;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gno::forward::gno_forward;
    use crate::gno::graph::{build_graph, NeighborGraph};
    use crate::gno::model::GnoConfig;
    use crate::market_data::SurfaceSnapshot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> GnoConfig {
        GnoConfig {
            layers: 2,
            channels: 4,
            lift_hidden: 8,
            kernel_hidden: 8,
            neighbor_cap: 3,
            ..GnoConfig::default()
        }
    }

    fn tiny_setup() -> (SurfaceSnapshot, NeighborGraph, NeighborGraph) {
        let pts = [
            ([0.3, -0.5], 0.25),
            ([0.3, 0.2], 0.22),
            ([0.45, -0.3], 0.24),
            ([0.45, 0.1], 0.21),
            ([0.6, -0.1], 0.23),
        ];
        let snapshot = crate::gno::forward::tests::snapshot_from(&pts);
        let coords = snapshot.coords();
        let graph_in = build_graph(&coords, &coords, 0.3, 3).unwrap();
        let extra = [[0.35, -0.2], [0.5, 0.0]];
        let mut all = coords.clone();
        all.extend_from_slice(&extra);
        let graph_all = build_graph(&coords, &all, 0.3, 3).unwrap();
        (snapshot, graph_in, graph_all)
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (snapshot, graph_in, graph_all) = tiny_setup();
        let model = GnoModel::new(tiny_config(), 5).unwrap();
        let out = gno_forward(&model, &snapshot, &graph_in, &graph_all).unwrap();
        let grad = gno_backward(&model, &out.tape, &vec![0.0; graph_all.len()]).unwrap();
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let (snapshot, graph_in, graph_all) = tiny_setup();
        let model = GnoModel::new(tiny_config(), 5).unwrap();
        let out = gno_forward(&model, &snapshot, &graph_in, &graph_all).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ua: Vec<f64> = (0..graph_all.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ub: Vec<f64> = (0..graph_all.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let us: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a + b).collect();
        let ga = gno_backward(&model, &out.tape, &ua).unwrap();
        let gb = gno_backward(&model, &out.tape, &ub).unwrap();
        let gs = gno_backward(&model, &out.tape, &us).unwrap();
        for ((a, b), s) in ga.values.iter().zip(&gb.values).zip(&gs.values) {
            let diff = (a + b - s).abs();
            assert!(diff < 1e-12 * (1.0 + s.abs()), "{a} + {b} != {s}");
        }
    }

    #[test]
    fn stale_tape_detected() {
        let (snapshot, graph_in, graph_all) = tiny_setup();
        let mut model = GnoModel::new(tiny_config(), 5).unwrap();
        let out = gno_forward(&model, &snapshot, &graph_in, &graph_all).unwrap();
        model.params[0] += 1.0;
        assert!(matches!(
            gno_backward(&model, &out.tape, &vec![0.0; graph_all.len()]),
            Err(GnoError::StaleTape)
        ));
    }

    #[test]
    fn every_parameter_matches_finite_differences() {
        let (snapshot, graph_in, graph_all) = tiny_setup();
        let mut model = GnoModel::new(tiny_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights: Vec<f64> = (0..graph_all.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |m: &GnoModel| -> f64 {
            let out = gno_forward(m, &snapshot, &graph_in, &graph_all).unwrap();
            out.vols.iter().zip(&weights).map(|(v, w)| v * w).sum()
        };
        let out = gno_forward(&model, &snapshot, &graph_in, &graph_all).unwrap();
        let grad = gno_backward(&model, &out.tape, &weights).unwrap();
        let h = 1e-4;
        for i in 0..model.params.len() {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let fp = loss(&model);
            model.params[i] = orig - h;
            let fm = loss(&model);
            model.params[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let denom = grad.values[i].abs().max(fd.abs()).max(1e-3);
            assert!(
                ((grad.values[i] - fd) / denom).abs() < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                grad.values[i]
            );
        }
    }
}
