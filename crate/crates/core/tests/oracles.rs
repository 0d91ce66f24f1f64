//! Tensor, SVD and MPO operations checked against independent brute-force oracles.

use mponet_core::tensor::strides;
use mponet_core::{svd, MpoLayer, MpoStructure, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

/// Contraction by enumerating every (free_a, free_b, contracted) index combination.
fn contract_oracle(a: &Tensor, b: &Tensor, axes_a: &[usize], axes_b: &[usize]) -> Tensor {
    let free_a: Vec<usize> = (0..a.rank()).filter(|k| !axes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|k| !axes_b.contains(k)).collect();
    let out_shape: Vec<usize> =
        free_a.iter().map(|&k| a.shape()[k]).chain(free_b.iter().map(|&k| b.shape()[k])).collect();
    let sum_shape: Vec<usize> = axes_a.iter().map(|&k| a.shape()[k]).collect();
    let sum_size: usize = sum_shape.iter().product();
    Tensor::from_fn(&out_shape, |out| {
        let mut acc = 0.0;
        for s in 0..sum_size {
            let sidx = unravel(s, &sum_shape);
            let mut ia = vec![0; a.rank()];
            let mut ib = vec![0; b.rank()];
            for (p, &k) in free_a.iter().enumerate() {
                ia[k] = out[p];
            }
            for (p, &k) in free_b.iter().enumerate() {
                ib[k] = out[free_a.len() + p];
            }
            for (p, (&ka, &kb)) in axes_a.iter().zip(axes_b).enumerate() {
                ia[ka] = sidx[p];
                ib[kb] = sidx[p];
            }
            acc += a.get(&ia) * b.get(&ib);
        }
        acc
    })
}

#[test]
fn contract_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, &[3, 4, 5]);
    let b = random_tensor(&mut rng, &[5, 4]);
    let fast = a.contract(&b, &[2, 1], &[0, 1]).unwrap();
    let mut slow = [0.0; 3];
    for (i, out) in slow.iter_mut().enumerate() {
        for j in 0..4 {
            for k in 0..5 {
                *out += a.get(&[i, j, k]) * b.get(&[k, j]);
            }
        }
    }
    assert_eq!(fast.shape(), &[3]);
    for (f, s) in fast.data().iter().zip(&slow) {
        assert!((f - s).abs() < 1e-12);
    }
}

/// (shape_a, shape_b, pairs, seed)
type ContractionCase = (Vec<usize>, Vec<usize>, Vec<(usize, usize)>, u64);

/// Cases with at most 6 axes in total and extents ≤ 5.
fn contraction_case() -> impl Strategy<Value = ContractionCase> {
    (1usize..=4, 1usize..=4, any::<u64>())
        .prop_filter("at most 6 axes", |(ra, rb, _)| ra + rb <= 6)
        .prop_flat_map(|(ra, rb, seed)| {
            (
                prop::collection::vec(1usize..=5, ra),
                prop::collection::vec(1usize..=5, rb),
                0usize..=ra.min(rb),
                Just(seed),
            )
        })
        .prop_map(|(mut sa, mut sb, pairs, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut axes_a: Vec<usize> = (0..sa.len()).collect();
            let mut axes_b: Vec<usize> = (0..sb.len()).collect();
            use rand::seq::SliceRandom;
            axes_a.shuffle(&mut rng);
            axes_b.shuffle(&mut rng);
            let pairs: Vec<(usize, usize)> = (0..pairs).map(|p| (axes_a[p], axes_b[p])).collect();
            for &(x, y) in &pairs {
                sb[y] = sa[x];
            }
            let _ = &mut sa;
            (sa, sb, pairs, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn contract_agrees_with_loop_nest((sa, sb, pairs, seed) in contraction_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &sa);
        let b = random_tensor(&mut rng, &sb);
        let axes_a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let axes_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let fast = a.contract(&b, &axes_a, &axes_b).unwrap();
        let slow = contract_oracle(&a, &b, &axes_a, &axes_b);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn reshape_and_permute_round_trip(shape in prop::collection::vec(1usize..=4, 1..=5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, &shape);
        let flat = t.reshape(&[t.len()]).unwrap().reshape(&shape).unwrap();
        prop_assert_eq!(flat.data(), t.data());
        let mut axes: Vec<usize> = (0..shape.len()).collect();
        use rand::seq::SliceRandom;
        axes.shuffle(&mut rng);
        let mut inverse = vec![0; axes.len()];
        for (k, &a) in axes.iter().enumerate() {
            inverse[a] = k;
        }
        let p = t.permute(&axes).unwrap();
        // out[σ(idx)] == t[idx]
        for flat_i in 0..t.len() {
            let idx = unravel(flat_i, &shape);
            let moved: Vec<usize> = axes.iter().map(|&a| idx[a]).collect();
            prop_assert_eq!(p.get(&moved).to_bits(), t.get(&idx).to_bits());
        }
        prop_assert_eq!(p.permute(&inverse).unwrap(), t);
    }
}

#[test]
fn matricize_fc2_first_layer_bond_one() {
    let s = MpoStructure::new(vec![4, 4, 4, 4], vec![4, 7, 7, 4], 2).unwrap();
    let w = MpoLayer::init_random(s, 0).to_dense().unwrap().into_shape(&[4, 4, 4, 4, 4, 7, 7, 4]).unwrap();
    let m = w.matricize(&[4, 0], &[5, 6, 7, 1, 2, 3]).unwrap();
    assert_eq!(m.shape(), &[16, 12544]);
}

fn check_svd(a: &Tensor, tol: f64) {
    let out = svd(a).unwrap();
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let r = m.min(n);
    assert_eq!(out.u.shape(), &[m, r]);
    assert_eq!(out.vt.shape(), &[r, n]);
    assert!(out.s.windows(2).all(|w| w[0] >= w[1]));
    assert!(out.s.iter().all(|&s| s >= 0.0));
    let utu = out.u.transpose().unwrap().matmul(&out.u).unwrap();
    assert!(utu.max_abs_diff(&Tensor::eye(r)) < tol, "U not orthonormal");
    let vvt = out.vt.matmul(&out.vt.transpose().unwrap()).unwrap();
    assert!(vvt.max_abs_diff(&Tensor::eye(r)) < tol, "Vt not orthonormal");
    let rec = out.reconstruct(r);
    let mut diff = rec.clone();
    diff.data_mut().iter_mut().zip(a.data()).for_each(|(d, x)| *d -= x);
    assert!(diff.frobenius_norm() <= tol * a.frobenius_norm().max(1e-300), "reconstruction");
}

#[test]
fn svd_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check_svd(&random_tensor(&mut rng, &[8, 5]), 1e-10);
    for &(m, n) in &[(1, 1), (1, 7), (7, 1), (30, 30), (50, 20), (20, 50), (120, 90), (200, 200)] {
        check_svd(&random_tensor(&mut rng, &[m, n]), 1e-10);
    }
}

#[test]
fn svd_rank_deficient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&mut rng, &[40, 3]);
    let b = random_tensor(&mut rng, &[3, 25]);
    let low = a.matmul(&b).unwrap();
    check_svd(&low, 1e-10);
    let s = svd(&low).unwrap().s;
    assert!(s[3..].iter().all(|&v| v < 1e-10 * s[0]));
}

#[test]
fn svd_square_low_rank_and_sparse() {
    // Square matrices of every rank need many completed basis vectors.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(m, n) in &[(28, 28), (12, 28), (28, 12)] {
        for r in 0..=m.min(n) {
            let low = random_tensor(&mut rng, &[m, r.max(1)])
                .matmul(&random_tensor(&mut rng, &[r.max(1), n]))
                .unwrap();
            let low = if r == 0 { Tensor::zeros(&[m, n]) } else { low };
            check_svd(&low, 1e-10);
        }
    }
    // Image-like: a bright block on an empty background.
    let mut img = Tensor::zeros(&[28, 28]);
    for i in 6..22 {
        for j in 9..19 {
            img.data_mut()[i * 28 + j] = ((i * 7 + j * 3) % 11) as f64 / 10.0;
        }
    }
    check_svd(&img, 1e-10);
}

#[test]
fn svd_converges_on_quantized_stroke_images() {
    // Byte-quantized strokes on an empty background: many exactly-zero rows and
    // columns plus numerically rank-deficient blocks.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let mut img = vec![0u8; 28 * 28];
        for _ in 0..rng.random_range(1..4) {
            let (mut r, mut c) = (rng.random_range(6..22) as f64, rng.random_range(6..22) as f64);
            let (dr, dc) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for _ in 0..rng.random_range(5..14) {
                for (oi, oj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (i, j) = ((r as usize + oi).min(27), (c as usize + oj).min(27));
                    img[i * 28 + j] = img[i * 28 + j].max(rng.random_range(120..=255));
                }
                r = (r + dr).clamp(4.0, 23.0);
                c = (c + dc).clamp(4.0, 23.0);
            }
        }
        let t = Tensor::new(vec![28, 28], img.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        check_svd(&t, 1e-10);
    }
}

#[test]
fn eckart_young_truncation_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(m, n) in &[(28, 28), (60, 35), (15, 70)] {
        let a = random_tensor(&mut rng, &[m, n]);
        let out = svd(&a).unwrap();
        for k in [0, 1, 3, 10, m.min(n)] {
            let approx = out.reconstruct(k);
            let mut diff = approx.clone();
            diff.data_mut().iter_mut().zip(a.data()).for_each(|(d, x)| *d -= x);
            let tail: f64 = out.s[k.min(out.s.len())..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((diff.frobenius_norm() - tail).abs() < 1e-10);
            // Any other rank-k matrix does no better: compare against a random rank-k perturbation.
            if k > 0 && k < m.min(n) {
                let p = random_tensor(&mut rng, &[m, k]).matmul(&random_tensor(&mut rng, &[k, n])).unwrap();
                let mut other = p.clone();
                other.data_mut().iter_mut().zip(a.data()).for_each(|(d, x)| *d -= x);
                assert!(other.frobenius_norm() >= tail - 1e-10);
            }
        }
    }
}

/// `W[y][x]` by summing over every bond path of the core chain.
fn dense_by_bond_paths(layer: &MpoLayer) -> Tensor {
    let s = layer.structure();
    let n = s.n();
    let (ny, nx) = (s.output_size(), s.input_size());
    let interior: Vec<usize> = s.bond_dims()[1..n].to_vec();
    let paths: usize = interior.iter().product();
    Tensor::from_fn(&[ny, nx], |ix| {
        let j = unravel(ix[0], s.output_dims());
        let i = unravel(ix[1], s.input_dims());
        let mut total = 0.0;
        for p in 0..paths {
            let mut bonds = vec![0];
            bonds.extend(unravel(p, &interior));
            bonds.push(0);
            let mut prod = 1.0;
            for k in 0..n {
                prod *= layer.cores()[k].get(&[bonds[k], j[k], i[k], bonds[k + 1]]);
            }
            total += prod;
        }
        total
    })
}

fn random_layer(rng: &mut ChaCha8Rng, n: usize, max_dim: usize, max_bond: usize) -> MpoLayer {
    let out: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_dim)).collect();
    let inp: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_dim)).collect();
    let bonds: Vec<usize> = (0..n.saturating_sub(1)).map(|_| rng.random_range(1..=max_bond)).collect();
    let s = MpoStructure::new(out, inp, bonds).unwrap();
    let mut layer = MpoLayer::init_random(s, rng.random());
    for v in layer.bias_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    layer
}

fn dense_apply(w: &Tensor, bias: &[f64], x: &Tensor) -> Tensor {
    let (ny, nx) = (w.shape()[0], w.shape()[1]);
    let b = x.shape()[1];
    Tensor::from_fn(&[ny, b], |ix| bias[ix[0]] + (0..nx).map(|k| w.get(&[ix[0], k]) * x.get(&[k, ix[1]])).sum::<f64>())
}

#[test]
fn to_dense_matches_bond_path_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let layer = random_layer(&mut rng, 3, 4, 3);
        let fast = layer.to_dense().unwrap();
        assert!(fast.max_abs_diff(&dense_by_bond_paths(&layer)) < 1e-12);
    }
}

#[test]
fn forward_matches_densified_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..50 {
        let n = 2 + trial % 3;
        let layer = random_layer(&mut rng, n, 5, 4);
        let nx = layer.structure().input_size();
        let batch = rng.random_range(1..=4);
        let x = random_tensor(&mut rng, &[nx, batch]);
        let y = layer.forward(&x).unwrap();
        let oracle = dense_apply(&dense_by_bond_paths(&layer), layer.bias(), &x);
        assert!(y.max_abs_diff(&oracle) < 1e-10, "trial {trial}");
    }
}

#[test]
fn forward_is_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let layer = random_layer(&mut rng, 3, 4, 3);
        let nx = layer.structure().input_size();
        let x1 = random_tensor(&mut rng, &[nx, 2]);
        let x2 = random_tensor(&mut rng, &[nx, 2]);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix = Tensor::new(vec![nx, 2], x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let y = layer.forward(&mix).unwrap();
        let (y1, y2) = (layer.forward(&x1).unwrap(), layer.forward(&x2).unwrap());
        for (k, &v) in y.data().iter().enumerate() {
            let bias = layer.bias()[k / 2];
            let expect = a * y1.data()[k] + b * y2.data()[k] - (a + b - 1.0) * bias;
            assert!((v - expect).abs() < 1e-10);
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps = 1e-5;
    for _ in 0..5 {
        let out: Vec<usize> = (0..3).map(|_| rng.random_range(1..=4)).collect();
        let inp: Vec<usize> = (0..3).map(|_| rng.random_range(1..=4)).collect();
        let s = MpoStructure::new(out, inp, 3).unwrap();
        let layer = MpoLayer::init_random(s.clone(), rng.random());
        let (nx, ny) = (s.input_size(), s.output_size());
        let x = random_tensor(&mut rng, &[nx, 3]);
        let gy = random_tensor(&mut rng, &[ny, 3]);
        let loss = |l: &MpoLayer, x: &Tensor| -> f64 {
            l.forward(x).unwrap().data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
        };
        let grads = layer.backward(&x, &gy).unwrap();
        for k in 0..3 {
            for e in 0..layer.cores()[k].len() {
                let mut plus = layer.clone();
                plus.cores_mut()[k].data_mut()[e] += eps;
                let mut minus = layer.clone();
                minus.cores_mut()[k].data_mut()[e] -= eps;
                let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps);
                assert!(rel_err(grads.core_grads[k].data()[e], numeric) < 1e-5);
            }
        }
        for e in 0..ny {
            let mut plus = layer.clone();
            plus.bias_mut()[e] += eps;
            let mut minus = layer.clone();
            minus.bias_mut()[e] -= eps;
            let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps);
            assert!(rel_err(grads.bias_grad[e], numeric) < 1e-5);
        }
        for e in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[e] += eps;
            let mut xm = x.clone();
            xm.data_mut()[e] -= eps;
            let numeric = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
            assert!(rel_err(grads.input_grad.data()[e], numeric) < 1e-5);
        }
        // input_grad == Wᵀ·grad_y
        let w = dense_by_bond_paths(&layer);
        let wt_g = Tensor::from_fn(&[nx, 3], |ix| (0..ny).map(|r| w.get(&[r, ix[0]]) * gy.get(&[r, ix[1]])).sum());
        assert!(grads.input_grad.max_abs_diff(&wt_g) < 1e-10);
    }
}

#[test]
fn init_matches_he_scale_of_dense_layer() {
    let s = MpoStructure::new(vec![4, 4, 4, 4], vec![4, 7, 7, 4], 16).unwrap();
    let target = (2.0f64 / 784.0).sqrt();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for seed in 0..20 {
        let w = MpoLayer::init_random(s.clone(), seed).to_dense().unwrap();
        sum_sq += w.data().iter().map(|v| v * v).sum::<f64>();
        count += w.len();
        let std = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!(std > target / 3.0 && std < target * 3.0, "seed {seed}: std {std}");
    }
    let pooled = (sum_sq / count as f64).sqrt();
    assert!(pooled > target / 3.0 && pooled < target * 3.0);
}

#[test]
fn strides_are_row_major() {
    assert_eq!(strides(&[4, 7, 7, 4]), vec![196, 28, 4, 1]);
}
