use std::sync::Arc;

use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{DomainId, Field};
use crate::mesh::unit_square_grid;
use crate::spectral::{decode, encode, fourier_basis, lbo_basis_for_mesh, BasisKind, SpectralBasis};
use crate::training::Normalizer;
use crate::NormError;

fn random_basis(n: usize, d: usize, seed: u64) -> Arc<SpectralBasis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let id = DomainId::hash_bytes(&[b"test-basis", &seed.to_le_bytes()]);
    Arc::new(SpectralBasis::from_modes(BasisKind::Lbo, m.as_ref(), (0..d).map(|k| k as f64).collect(), id).unwrap())
}

fn random_field(n: usize, c: usize, domain: DomainId, rng: &mut ChaCha8Rng) -> Field {
    Field::from_fn(n, c, domain, |_, _| rng.random_range(-1.0..1.0))
}

fn random_layer(b_in: Arc<SpectralBasis>, b_out: Arc<SpectralBasis>, w: usize, rng: &mut ChaCha8Rng) -> LLayerParams {
    let mut l = LLayerParams::zeros(b_in, b_out, w).unwrap();
    l.w.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    l.b.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    l.r.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    l
}

/// Triple loop straight from the index definition of the mixing tensor.
fn block_oracle(l: &LLayerParams, v: &Field) -> Vec<f64> {
    let (bi, bo) = (&l.basis_in, &l.basis_out);
    let (d_m, w) = (bi.d_m(), l.width());
    let mut c = vec![vec![0.0; w]; d_m];
    for k in 0..d_m {
        for j in 0..w {
            for i in 0..bi.n_x() {
                c[k][j] += bi.pinv()[(k, i)] * v.get(i, j);
            }
        }
    }
    let mut mix = vec![vec![0.0; w]; d_m];
    for k in 0..d_m {
        for lo in 0..w {
            for j in 0..w {
                mix[k][lo] += l.r[(k * w + lo) * w + j] * c[k][j];
            }
        }
    }
    let mut out = vec![0.0; bo.n_x() * w];
    for i in 0..bo.n_x() {
        for lo in 0..w {
            for k in 0..d_m {
                out[i * w + lo] += bo.modes()[(i, k)] * mix[k][lo];
            }
        }
    }
    out
}

#[test]
fn block_matches_loop_oracle_hand_sized() {
    let phi = Mat::from_fn(3, 2, |i, j| [[1.0, 0.5], [0.0, 2.0], [-1.0, 1.0]][i][j]);
    let basis = Arc::new(SpectralBasis::from_modes(BasisKind::Lbo, phi.as_ref(), vec![0.0, 1.0], DomainId::default()).unwrap());
    let mut l = LLayerParams::zeros(basis.clone(), basis, 2).unwrap();
    l.r = vec![1.0, -2.0, 0.5, 3.0, 0.25, 0.0, -1.0, 4.0];
    let v = Field::new(3, 2, vec![1.0, 2.0, -0.5, 0.0, 3.0, 1.5], DomainId::default()).unwrap();
    let got = l.spectral_block(&v).unwrap();
    for (a, b) in got.values().iter().zip(block_oracle(&l, &v)) {
        assert!((a - b).abs() <= 1e-13, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn block_matches_loop_oracle(d_m in 1usize..=5, w in 1usize..=5, extra in 0usize..=3, cross in any::<bool>(), seed in any::<u64>()) {
        let n = (d_m + extra).min(8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bi = random_basis(n, d_m, seed);
        let bo = if cross { random_basis(8, d_m, seed ^ 1) } else { bi.clone() };
        let l = random_layer(bi.clone(), bo, w, &mut rng);
        let v = random_field(n, w, bi.source_id(), &mut rng);
        let got = l.spectral_block(&v).unwrap();
        for (a, b) in got.values().iter().zip(block_oracle(&l, &v)) {
            prop_assert!((a - b).abs() <= 1e-13);
        }
    }
}

#[test]
fn identity_mixing_projects_onto_span() {
    let mesh = unit_square_grid(6).unwrap();
    let basis = Arc::new(lbo_basis_for_mesh(&mesh, 10).unwrap());
    let w = 3;
    let mut l = LLayerParams::zeros(basis.clone(), basis.clone(), w).unwrap();
    for k in 0..10 {
        for j in 0..w {
            l.r[(k * w + j) * w + j] = 1.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let coeffs = Mat::from_fn(10, w, |_, _| rng.random_range(-1.0..1.0));
    let v = decode(&basis, coeffs.as_ref()).unwrap();
    assert!(l.spectral_block(&v).unwrap().max_abs_diff(&v) <= 1e-8);
    l.r.iter_mut().for_each(|x| *x = 0.0);
    assert_eq!(l.spectral_block(&v).unwrap().norm(), 0.0);
}

#[test]
fn trivial_layers() {
    let basis = random_basis(7, 3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_field(7, 2, basis.source_id(), &mut rng);
    let mut l = LLayerParams::zeros(basis.clone(), basis.clone(), 2).unwrap();
    l.activation = Activation::Relu;
    assert_eq!(l.forward(&v).unwrap().norm(), 0.0);
    l.activation = Activation::Identity;
    l.w = vec![1.0, 2.0, -1.0, 0.5];
    l.b = vec![0.1, -0.2];
    let out = l.forward(&v).unwrap();
    for i in 0..7 {
        let (x0, x1) = (v.get(i, 0), v.get(i, 1));
        assert!((out.get(i, 0) - (x0 - x1 + 0.1)).abs() < 1e-15);
        assert!((out.get(i, 1) - (2.0 * x0 + 0.5 * x1 - 0.2)).abs() < 1e-15);
    }
}

/// Assembles the layer as one `(n w) × (n w)` matrix acting on the
/// row-major flattening of `V`.
fn dense_layer_operator(l: &LLayerParams) -> Mat<f64> {
    let (bi, bo, w) = (&l.basis_in, &l.basis_out, l.width());
    assert!(!l.is_cross());
    let n = bi.n_x();
    Mat::from_fn(n * w, n * w, |row, col| {
        let (i, lo) = (row / w, row % w);
        let (i2, j) = (col / w, col % w);
        let mut v = if i == i2 { l.w[j * w + lo] } else { 0.0 };
        for k in 0..bi.d_m() {
            v += bo.modes()[(i, k)] * l.r[(k * w + lo) * w + j] * bi.pinv()[(k, i2)];
        }
        v
    })
}

#[test]
fn layer_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let basis = random_basis(9, 4, 3);
    for act in [Activation::Identity, Activation::Gelu, Activation::Relu] {
        let mut l = random_layer(basis.clone(), basis.clone(), 3, &mut rng);
        l.activation = act;
        let v = random_field(9, 3, basis.source_id(), &mut rng);
        let k = dense_layer_operator(&l);
        let got = l.forward(&v).unwrap();
        for row in 0..27 {
            let mut z = l.b[row % 3];
            for col in 0..27 {
                z += k[(row, col)] * v.values()[col];
            }
            assert!((got.values()[row] - act.eval(z)).abs() <= 1e-12);
        }
    }
}

#[test]
fn representability_of_diagonal_mixing() {
    let mesh = unit_square_grid(5).unwrap();
    let basis = Arc::new(lbo_basis_for_mesh(&mesh, 12).unwrap());
    let scale: Vec<f64> = (0..12).map(|k| (-0.3 * k as f64).exp()).collect();
    let mut l = LLayerParams::zeros(basis.clone(), basis.clone(), 1).unwrap();
    l.r.copy_from_slice(&scale);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coeffs = Mat::from_fn(12, 1, |_, _| rng.random_range(-1.0..1.0));
    let v = decode(&basis, coeffs.as_ref()).unwrap();
    let c = encode(&basis, &v).unwrap();
    let scaled = Mat::from_fn(12, 1, |k, _| scale[k] * c[(k, 0)]);
    let want = decode(&basis, scaled.as_ref()).unwrap();
    assert!(l.forward(&v).unwrap().max_abs_diff(&want) <= 1e-10);
}

#[test]
fn param_count_shape_formula() {
    let basis = random_basis(6, 3, 5);
    let spec = ModelSpec { width: 2, layers: 1, q_hidden: None, ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, basis.clone(), basis).unwrap();
    assert_eq!(param_count(&m), 25);

    let mesh = unit_square_grid(6).unwrap();
    let fine = mesh.refine().unwrap();
    let spec = ModelSpec { width: 4, layers: 2, modes: Some(8), ..ModelSpec::new(1, 1) };
    let coarse_b = Arc::new(lbo_basis_for_mesh(&mesh, 8).unwrap());
    let fine_b = Arc::new(lbo_basis_for_mesh(&fine, 8).unwrap());
    let a = build_model(&spec, coarse_b.clone(), coarse_b.clone()).unwrap();
    let b = build_model(&spec, fine_b.clone(), fine_b).unwrap();
    assert_eq!(a.param_count(), b.param_count());

    let wide = random_basis(20, 16, 6);
    let s8 = build_model(&spec, wide.clone(), wide.clone()).unwrap();
    let s16 = build_model(&ModelSpec { modes: Some(16), ..spec }, wide.clone(), wide).unwrap();
    assert_eq!(s16.param_count() - s8.param_count(), 2 * 8 * 16);
}

#[test]
fn darcy_and_temporal_defaults() {
    let basis = random_basis(140, 128, 8);
    let m = build_model(&ModelSpec::darcy(), basis.clone(), basis).unwrap();
    let r = 128 * 32 * 32;
    assert_eq!(m.param_count(), (32 + 32) + 4 * (32 * 32 + 32 + r) + (32 * 128 + 128) + (128 + 1));
    assert_eq!(m.architecture().layers.last().unwrap().activation, Activation::Identity);

    let time = Arc::new(fourier_basis(40, 17).unwrap());
    let space = random_basis(70, 64, 9);
    let err = build_model(&ModelSpec::blood_flow(), time.clone(), space.clone()).unwrap_err();
    assert!(matches!(err, NormError::InvalidSpec(_)));
    let spec = ModelSpec { time_modes: Some(17), ..ModelSpec::blood_flow() };
    let m = build_model(&spec, time, space).unwrap();
    assert_eq!(m.output_nodes(), 70 * 40);
    assert!(matches!(m.architecture().layers[2].kind, LayerKind::TimeToSpace { .. }));
}

#[test]
fn wiring_contracts() {
    let x = random_basis(10, 4, 1);
    let y = random_basis(13, 4, 2);
    let err = build_model(&ModelSpec::new(1, 1), x.clone(), y.clone()).unwrap_err();
    assert!(matches!(err, NormError::InvalidSpec(_)));
    let spec = ModelSpec { width: 3, layers: 3, wiring: Wiring::CrossManifold { switch_at: 1 }, ..ModelSpec::new(2, 1) };
    let m = build_model(&spec, x.clone(), y.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_field(10, 2, x.source_id(), &mut rng);
    let out = m.forward(&a).unwrap();
    assert_eq!((out.n_nodes(), out.channels()), (13, 1));
    assert_eq!(out.domain_id, y.source_id());
    let bad = random_field(10, 2, y.source_id(), &mut rng);
    assert!(matches!(m.forward(&bad), Err(NormError::DomainMismatch(_))));
    let z = random_basis(13, 5, 3);
    assert!(matches!(build_model(&spec, x, z), Err(NormError::InvalidSpec(_))));
}

#[test]
fn zero_parameters_give_q_bias() {
    let basis = random_basis(8, 3, 4);
    let spec = ModelSpec { width: 4, layers: 2, q_hidden: None, ..ModelSpec::new(1, 2) };
    let mut m = build_model(&spec, basis.clone(), basis.clone()).unwrap();
    let n = m.param_count();
    let mut p = vec![0.0; n];
    p[n - 2] = 0.7;
    p[n - 1] = -1.5;
    m.set_params(p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = m.forward(&random_field(8, 1, basis.source_id(), &mut rng)).unwrap();
    for i in 0..8 {
        assert_eq!((out.get(i, 0), out.get(i, 1)), (0.7, -1.5));
    }
}

fn loss(m: &NormModel, a: &Field, g: &Field) -> f64 {
    let out = m.forward(a).unwrap();
    out.values().iter().zip(g.values()).map(|(x, y)| x * y).sum()
}

/// Largest relative deviation between backward and central differences
/// over `count` random parameters.
fn fd_error(m: &NormModel, a: &Field, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = m.forward(a).unwrap();
    let g = random_field(out.n_nodes(), out.channels(), out.domain_id, &mut rng);
    let grads = m.backward(a, &g).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = m.clone();
    for _ in 0..count {
        let i = rng.random_range(0..m.param_count());
        let p0 = m.params()[i];
        probe.params_mut()[i] = p0 + h;
        let up = loss(&probe, a, &g);
        probe.params_mut()[i] = p0 - h;
        let down = loss(&probe, a, &g);
        probe.params_mut()[i] = p0;
        let fd = (up - down) / (2.0 * h);
        let an = grads.params[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-7));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_basis(12, 6, 21);
    let spec = ModelSpec { width: 4, layers: 2, q_hidden: Some(8), p_hidden: Some(5), ..ModelSpec::new(2, 2) };
    let mut m = build_model(&spec, x.clone(), x.clone()).unwrap();
    m.set_normalizers(
        Some(Normalizer { mean: vec![0.3, -0.1], std: vec![2.0, 0.5] }),
        Some(Normalizer { mean: vec![1.0, 0.0], std: vec![3.0, 0.25] }),
    )
    .unwrap();
    let a = random_field(12, 2, x.source_id(), &mut rng);
    assert!(fd_error(&m, &a, 60, 1) <= 1e-5);

    let y = random_basis(9, 6, 22);
    let spec = ModelSpec { width: 3, layers: 3, q_hidden: Some(4), wiring: Wiring::CrossManifold { switch_at: 1 }, ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, x.clone(), y).unwrap();
    let a = random_field(12, 1, x.source_id(), &mut rng);
    assert!(fd_error(&m, &a, 60, 2) <= 1e-5);

    let t = Arc::new(fourier_basis(7, 5).unwrap());
    let spec = ModelSpec { width: 3, layers: 4, wiring: Wiring::TemporalToManifold { switch_at: 1 }, q_hidden: Some(4), ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, t.clone(), x).unwrap();
    let a = random_field(7, 1, t.source_id(), &mut rng);
    assert!(fd_error(&m, &a, 80, 3) <= 1e-5);
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_basis(10, 4, 30);
    let spec = ModelSpec { width: 3, layers: 2, q_hidden: Some(4), ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, x.clone(), x.clone()).unwrap();
    let a = random_field(10, 1, x.source_id(), &mut rng);
    let g = random_field(10, 1, x.source_id(), &mut rng);
    let grads = m.backward(&a, &g).unwrap();
    let h = 1e-6;
    for i in 0..10 {
        let mut up = a.clone();
        up.set(i, 0, a.get(i, 0) + h);
        let mut down = a.clone();
        down.set(i, 0, a.get(i, 0) - h);
        let fd = (loss(&m, &up, &g) - loss(&m, &down, &g)) / (2.0 * h);
        assert!((fd - grads.input.get(i, 0)).abs() <= 1e-6 * fd.abs().max(1.0));
    }
}

#[test]
fn zero_output_gradient_gives_zero() {
    let x = random_basis(10, 4, 31);
    let m = build_model(&ModelSpec { width: 3, layers: 2, ..ModelSpec::new(1, 1) }, x.clone(), x.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_field(10, 1, x.source_id(), &mut rng);
    let gr = m.backward(&a, &Field::zeros(10, 1, x.source_id())).unwrap();
    assert!(gr.params.iter().all(|&v| v == 0.0));
    assert!(gr.input.values().iter().all(|&v| v == 0.0));
}

#[test]
fn linear_layer_weight_gradient_is_closed_form() {
    let x = random_basis(8, 3, 40);
    let spec = ModelSpec { width: 2, layers: 1, q_hidden: None, activation: Activation::Identity, ..ModelSpec::new(2, 2) };
    let mut m = build_model(&spec, x.clone(), x.clone()).unwrap();
    // identity lifting and projection, so the single layer sees the raw input
    let mut p = m.params().to_vec();
    p[..6].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let n = p.len();
    p[n - 6..].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    m.set_params(p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_field(8, 2, x.source_id(), &mut rng);
    let g = random_field(8, 2, x.source_id(), &mut rng);
    let gr = m.backward(&a, &g).unwrap();
    let (_, range) = m.param_groups().into_iter().find(|(name, _)| name == "layer0.weight").unwrap();
    for j in 0..2 {
        for l in 0..2 {
            let want: f64 = (0..8).map(|i| a.get(i, j) * g.get(i, l)).sum();
            assert!((gr.params[range.start + j * 2 + l] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn batch_equals_single_and_is_deterministic() {
    let x = random_basis(11, 5, 50);
    let spec = ModelSpec { width: 3, layers: 2, q_hidden: Some(6), seed: 9, ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, x.clone(), x.clone()).unwrap();
    let m2 = build_model(&spec, x.clone(), x.clone()).unwrap();
    assert_eq!(m.params(), m2.params());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<Field> = (0..3).map(|_| random_field(11, 1, x.source_id(), &mut rng)).collect();
    let refs: Vec<&Field> = a.iter().collect();
    let out = m.forward_batch(&refs).unwrap();
    for (f, o) in a.iter().zip(&out) {
        assert!(m.forward(f).unwrap().max_abs_diff(o) <= 1e-14);
    }
    let gs: Vec<Field> = (0..3).map(|_| random_field(11, 1, x.source_id(), &mut rng)).collect();
    let (_, tape) = m.forward_with_tape(&refs).unwrap();
    let gb = m.backward_tape(&tape, &gs.iter().collect::<Vec<_>>()).unwrap();
    let mut sum = vec![0.0; m.param_count()];
    for (f, g) in a.iter().zip(&gs) {
        for (s, v) in sum.iter_mut().zip(m.backward(f, g).unwrap().params) {
            *s += v;
        }
    }
    for (s, v) in sum.iter().zip(&gb.params) {
        assert!((s - v).abs() <= 1e-12 * s.abs().max(1.0));
    }
}

#[test]
fn node_permutation_commutes() {
    let n = 9;
    let x = random_basis(n, 4, 60);
    let perm: Vec<usize> = vec![3, 0, 7, 1, 8, 2, 6, 4, 5];
    let phi = x.modes();
    let permuted_modes = Mat::from_fn(n, 4, |i, k| phi[(perm[i], k)]);
    let xp = Arc::new(
        SpectralBasis::from_modes(BasisKind::Lbo, permuted_modes.as_ref(), x.values().to_vec(), x.source_id()).unwrap(),
    );
    let spec = ModelSpec { width: 3, layers: 2, q_hidden: Some(5), ..ModelSpec::new(1, 1) };
    let m = build_model(&spec, x.clone(), x.clone()).unwrap();
    let mp = m.rebind(vec![xp]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_field(n, 1, x.source_id(), &mut rng);
    let ap = Field::from_fn(n, 1, x.source_id(), |i, c| a.get(perm[i], c));
    let out = m.forward(&a).unwrap();
    let outp = mp.forward(&ap).unwrap();
    for i in 0..n {
        assert!((outp.get(i, 0) - out.get(perm[i], 0)).abs() <= 1e-12);
    }
}

#[test]
fn checkpoint_round_trip() {
    let t = Arc::new(fourier_basis(9, 5).unwrap());
    let y = random_basis(6, 4, 70);
    let spec = ModelSpec { width: 3, layers: 3, wiring: Wiring::TemporalToManifold { switch_at: 1 }, q_hidden: Some(4), ..ModelSpec::new(1, 1) };
    let mut m = build_model(&spec, t.clone(), y).unwrap();
    m.set_normalizers(None, Some(Normalizer { mean: vec![2.0], std: vec![0.5] })).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.params(), m.params());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_field(9, 1, t.source_id(), &mut rng);
    assert_eq!(back.forward(&a).unwrap(), m.forward(&a).unwrap());

    let bin = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[6] = b'9';
    std::fs::write(&bin, bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(NormError::Format(_))));
}
