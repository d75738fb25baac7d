//! Minimal dense numerical substrate: matrices, a small MLP with reverse-mode
//! gradients with respect to both parameters and inputs, and Adam.

pub mod adam;
pub mod matrix;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{dot, sq_dist, Matrix};
pub use mlp::{Activation, ForwardCache, Layer, MlpGrads, MlpParams};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-by-scalar reference forward pass, written independently of the
    /// batched implementation: walks one input row at a time through explicit
    /// loops over output units.
    fn reference_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &params.layers {
            let mut next = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut acc = layer.bias[o];
                for (k, &v) in cur.iter().enumerate() {
                    acc += layer.weights.get(o, k) * v;
                }
                next[o] = match layer.activation {
                    Activation::Softplus => (1.0 + acc.exp()).ln(),
                    Activation::Linear => acc,
                };
            }
            cur = next;
        }
        cur
    }

    fn random_net(widths: &[usize], seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::new(widths, &mut rng).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
        m
    }

    #[test]
    fn zero_weight_network_maps_everything_to_zero() {
        let mut net = random_net(&[3, 4, 2], 1);
        for l in &mut net.layers {
            for w in l.weights.data_mut() {
                *w = 0.0;
            }
        }
        let x = random_matrix(5, 3, 2);
        let y = net.forward(&x).unwrap();
        // softplus(0) = ln 2 feeds the linear output layer through zero
        // weights, so the output is exactly the (zero) output bias.
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_is_identity() {
        let mut net = random_net(&[3, 3], 3);
        let l = &mut net.layers[0];
        l.activation = Activation::Linear;
        for o in 0..3 {
            for k in 0..3 {
                l.weights.set(o, k, if o == k { 1.0 } else { 0.0 });
            }
            l.bias[o] = 0.0;
        }
        let x = random_matrix(4, 3, 4);
        let y = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let net = random_net(&[4, 7, 3], 5);
        let x = random_matrix(6, 4, 6);
        let y = net.forward(&x).unwrap();
        for i in 0..x.rows() {
            let want = reference_forward(&net, x.row(i));
            for (a, b) in y.row(i).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = random_net(&[4, 5, 2], 7);
        let x = random_matrix(3, 4, 8);
        let y1 = net.forward(&x).unwrap();
        let y2 = net.forward(&x).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn linear_layer_input_gradient_is_column_sum_of_weights() {
        let mut net = random_net(&[3, 2], 9);
        net.layers[0].activation = Activation::Linear;
        let x = random_matrix(1, 3, 10);
        let upstream = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let (_, gx) = net.grad(&x, &upstream).unwrap();
        for k in 0..3 {
            let want = net.layers[0].weights.get(0, k) + net.layers[0].weights.get(1, k);
            assert!((gx.get(0, k) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(&[3, 5, 2], 11);
        let x = random_matrix(4, 3, 12);
        let upstream = Matrix::zeros(4, 2);
        let (gp, gx) = net.grad(&x, &upstream).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        for w in &gp.weights {
            assert!(w.data().iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences on <upstream, forward(x)>.
    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-4;
        for seed in 0..6u64 {
            let mut net = random_net(&[3, 6, 4, 2], 100 + seed);
            let x = random_matrix(5, 3, 200 + seed);
            let upstream = random_matrix(5, 2, 300 + seed);
            let objective = |net: &MlpParams, x: &Matrix| -> f64 {
                net.forward(x).unwrap().dot(&upstream).unwrap()
            };
            let (gp, gx) = net.grad(&x, &upstream).unwrap();

            // input gradients
            let mut xp = x.clone();
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    let orig = xp.get(i, j);
                    xp.set(i, j, orig + h);
                    let plus = objective(&net, &xp);
                    xp.set(i, j, orig - h);
                    let minus = objective(&net, &xp);
                    xp.set(i, j, orig);
                    let fd = (plus - minus) / (2.0 * h);
                    let got = gx.get(i, j);
                    let denom = fd.abs().max(got.abs()).max(1e-3);
                    assert!(
                        ((fd - got) / denom).abs() <= 1e-5,
                        "input grad ({i},{j}): fd {fd} vs {got}"
                    );
                }
            }

            // parameter gradients (spot-check every bias and weight entry)
            for l in 0..net.layers.len() {
                for o in 0..net.layers[l].out_dim() {
                    for k in 0..net.layers[l].in_dim() {
                        let orig = net.layers[l].weights.get(o, k);
                        net.layers[l].weights.set(o, k, orig + h);
                        let plus = objective(&net, &x);
                        net.layers[l].weights.set(o, k, orig - h);
                        let minus = objective(&net, &x);
                        net.layers[l].weights.set(o, k, orig);
                        let fd = (plus - minus) / (2.0 * h);
                        let got = gp.weights[l].get(o, k);
                        let denom = fd.abs().max(got.abs()).max(1e-3);
                        assert!(
                            ((fd - got) / denom).abs() <= 1e-5,
                            "weight grad layer {l} ({o},{k}): fd {fd} vs {got}"
                        );
                    }
                    let orig = net.layers[l].bias[o];
                    net.layers[l].bias[o] = orig + h;
                    let plus = objective(&net, &x);
                    net.layers[l].bias[o] = orig - h;
                    let minus = objective(&net, &x);
                    net.layers[l].bias[o] = orig;
                    let fd = (plus - minus) / (2.0 * h);
                    let got = gp.bias[l][o];
                    let denom = fd.abs().max(got.abs()).max(1e-3);
                    assert!(((fd - got) / denom).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn gradient_of_sum_equals_sum_of_row_gradients() {
        let net = random_net(&[3, 5, 2], 42);
        let x = random_matrix(4, 3, 43);
        let upstream = random_matrix(4, 2, 44);
        let (gp_all, gx_all) = net.grad(&x, &upstream).unwrap();

        let mut gp_sum = MlpGrads::zeros_like(&net);
        let mut gx_sum = Matrix::zeros(4, 3);
        for i in 0..4 {
            let xi = x.select_rows(&[i]);
            let ui = upstream.select_rows(&[i]);
            let (gp, gx) = net.grad(&xi, &ui).unwrap();
            gp_sum.add_scaled(&gp, 1.0);
            gx_sum.row_mut(i).copy_from_slice(gx.row(0));
        }
        assert!(gx_all.max_abs_diff(&gx_sum) < 1e-12);
        for (a, b) in gp_all.weights.iter().zip(&gp_sum.weights) {
            assert!(a.max_abs_diff(b) < 1e-10);
        }
    }

    #[test]
    fn flatten_roundtrip_preserves_parameters() {
        let net = random_net(&[3, 4, 2], 77);
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut other = random_net(&[3, 4, 2], 78);
        other.assign_from_flat(&flat);
        assert_eq!(net, other);
    }
}
