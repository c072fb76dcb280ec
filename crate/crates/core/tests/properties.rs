use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nldae::decouple::{explicit_decouple, implicit_decouple, DecoupledSystem};
use nldae::gasnet::{assemble_dae, chain_network, gas_steady_state, structured_decouple, ChainSpec, Friction, GasOptions};
use nldae::integrate::{implicit_euler, simulate_decoupled, AlgebraicSchedule, Inputs, NewtonOptions, Signal, SimOptions, TimeGrid};
use nldae::mor::{build_irom, deim_from_basis, pod_basis, simulate_irom, PodCriterion};
use nldae::nonlinear::{Elementwise, ScalarMap};
use nldae::pencil::{build_projector_chain, ChainOptions};
use nldae::sparse::CsrMatrix;
use nldae::{DescriptorSystemF32, DescriptorSystemF64};

fn near_identity(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    DMatrix::identity(n, n) + r * (0.4 / (n as f64).sqrt())
}

/// `E = T diag(I_k, 0) S`, `A = T diag(J, I) S` with stable `J`, plus a mild
/// `tanh` nonlinearity on some rows.
fn random_system(seed: u64, n: usize) -> (DescriptorSystemF64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..n);
    let t = near_identity(&mut rng, n);
    let s = near_identity(&mut rng, n);
    let j = near_identity(&mut rng, k) * 0.5 - DMatrix::identity(k, k) * 2.0;
    let mut d_e = DMatrix::zeros(n, n);
    let mut d_a = DMatrix::identity(n, n);
    d_e.view_mut((0, 0), (k, k)).fill_with_identity();
    d_a.view_mut((0, 0), (k, k)).copy_from(&j);
    let e = &t * d_e * &s;
    let a = &t * d_a * &s;
    let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut terms = Vec::new();
    for r in 0..n {
        if rng.gen_bool(0.5) {
            terms.push((r, rng.gen_range(0..n), 0.2));
        }
    }
    let f = Elementwise::new(n, ScalarMap::Tanh, terms).unwrap();
    let sp = |m: &DMatrix<f64>| CsrMatrix::from_dense(m, 0.0);
    let sys = DescriptorSystemF64::new(sp(&e), sp(&a), sp(&b), sp(&c), Arc::new(f), DVector::zeros(n)).unwrap();
    (sys, k)
}

fn inputs() -> Inputs {
    Inputs::new(vec![Signal::Constant(1.0), Signal::Pwl(vec![(0.0, 0.0), (0.5, 1.0), (1.0, -0.5)])]).unwrap()
}

fn consistent_state(dec: &DecoupledSystem<f64>, xi_p: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let lu = dec.factor_e_q().unwrap();
    let xq = dec.solve_algebraic(lu.as_ref(), xi_p, u).unwrap();
    dec.recompose_state(xi_p, &xq)
}

fn max_output_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn both_decoupled_forms_reproduce_the_dae(seed in any::<u64>(), n in 2usize..12) {
        let (sys, k) = random_system(seed, n);
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        prop_assert_eq!(ch.index, 1);
        prop_assert!(ch.residuals().max() < 1e-10);
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let u0 = inputs().value(0.0);
        let opts = SimOptions::default();
        let imp = implicit_decouple(&sys, &ch).unwrap();
        let exp = explicit_decouple(&sys, &ch).unwrap();
        prop_assert_eq!((imp.n_p(), imp.n_q()), (k, n - k));
        prop_assert_eq!((exp.n_p(), exp.n_q()), (k, n - k));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let xi = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = consistent_state(&imp, &xi, &u0);
        let full = implicit_euler(&sys, &inputs(), &grid, &x0, &opts).unwrap();
        for dec in [&imp, &exp] {
            let init = dec.consistent_initialize(&x0, &u0).unwrap();
            prop_assert!(init.residual < 1e-10);
            let t = simulate_decoupled(dec, &inputs(), &grid, &init.xi_p, &opts, AlgebraicSchedule::EveryStep).unwrap();
            prop_assert!(max_output_gap(&t.outputs, &full.outputs) < 1e-8);
        }
    }

    #[test]
    fn algebraic_schedule_does_not_change_outputs(seed in any::<u64>(), n in 2usize..10, stride in 1usize..7) {
        let (sys, _) = random_system(seed, n);
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        let dec = implicit_decouple(&sys, &ch).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 0.01).unwrap();
        let opts = SimOptions { stride, ..SimOptions::default() };
        let xi = DVector::from_element(dec.n_p(), 0.3);
        let every = simulate_decoupled(&dec, &inputs(), &grid, &xi, &opts, AlgebraicSchedule::EveryStep).unwrap();
        let sparse = simulate_decoupled(&dec, &inputs(), &grid, &xi, &opts, AlgebraicSchedule::OutputTimes).unwrap();
        prop_assert_eq!(&every.times, &sparse.times);
        prop_assert_eq!(&every.outputs, &sparse.outputs);
        prop_assert!(sparse.algebraic_solves <= every.algebraic_solves);
        prop_assert_eq!(sparse.algebraic_solves, sparse.times.len());
    }

    #[test]
    fn full_bases_give_an_exact_reduced_model(seed in any::<u64>(), n in 2usize..10) {
        let (sys, _) = random_system(seed, n);
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        let dec = implicit_decouple(&sys, &ch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let orth = |m: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let (v_p, v_q) = (orth(dec.n_p(), &mut rng), orth(dec.n_q(), &mut rng));
        let rom = build_irom(&dec, &v_p, &v_q, None, None).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 0.01).unwrap();
        let xi = DVector::from_fn(dec.n_p(), |i, _| 0.1 * i as f64);
        let opts = SimOptions::default();
        let full = simulate_decoupled(&dec, &inputs(), &grid, &xi, &opts, AlgebraicSchedule::EveryStep).unwrap();
        let red = simulate_irom(&rom, &inputs(), &grid, &(v_p.transpose() * &xi), &opts).unwrap();
        prop_assert!(max_output_gap(&red.outputs, &full.outputs) < 1e-8);
    }

    #[test]
    fn pod_basis_is_orthonormal_and_energy_grows(seed in any::<u64>(), rows in 3usize..30, cols in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: DMatrix<f64> = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let full_rank = pod_basis(&s, PodCriterion::Rank(rows.min(cols))).unwrap();
        prop_assert!((full_rank.energy - 1.0).abs() < 1e-12);
        let mut last = 0.0;
        for r in 1..=rows.min(cols) {
            let p = pod_basis(&s, PodCriterion::Rank(r)).unwrap();
            prop_assert_eq!(p.rank(), r);
            let gram = p.basis.transpose() * &p.basis;
            prop_assert!((gram - DMatrix::identity(r, r)).amax() < 1e-12);
            prop_assert!(p.energy >= last - 1e-15);
            last = p.energy;
            for c in 0..r {
                let peak = p.basis.column(c).iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                prop_assert!(peak > 0.0);
            }
        }
        let e = pod_basis(&s, PodCriterion::Energy(0.9)).unwrap();
        prop_assert!(e.energy >= 0.9);
        if e.rank() > 1 {
            prop_assert!(pod_basis(&s, PodCriterion::Rank(e.rank() - 1)).unwrap().energy < 0.9);
        }
    }

    #[test]
    fn deim_is_exact_on_its_basis(seed in any::<u64>(), rows in 2usize..30, m in 1usize..8) {
        let m = m.min(rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(rows, m, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let deim = deim_from_basis(u.clone()).unwrap();
        prop_assert_eq!(deim.len(), m);
        let coef = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let f = &u * coef;
        prop_assert!((deim.interpolate(&deim.sample(&f)) - &f).amax() < 1e-9);
    }

    #[test]
    fn pwl_signals_stay_within_their_breakpoints(ts in prop::collection::vec(0.1f64..5.0, 1..6), vs in prop::collection::vec(-10.0f64..10.0, 6), t in -1.0f64..30.0) {
        let mut acc = 0.0;
        let pts: Vec<(f64, f64)> = ts.iter().zip(&vs).map(|(dt, v)| { acc += dt; (acc, *v) }).collect();
        let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.1), h.max(p.1)));
        let s = Signal::Pwl(pts.clone());
        s.validate().unwrap();
        let v = s.value(t);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        for (tk, vk) in &pts {
            prop_assert!((s.value(*tk) - vk).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_scalar_dae_matches_the_euler_recursion() {
    // x1' = −2 x1 + u, 0 = −x2 + 3 x1, y = x2
    let d = |v: Vec<f64>, r, c| CsrMatrix::from_dense(&DMatrix::from_row_slice(r, c, &v), 0.0);
    let sys = DescriptorSystemF64::linear(
        d(vec![1.0, 0.0, 0.0, 0.0], 2, 2),
        d(vec![-2.0, 0.0, 3.0, -1.0], 2, 2),
        d(vec![1.0, 0.0], 2, 1),
        d(vec![0.0, 1.0], 1, 2),
    )
    .unwrap();
    let h = 0.05;
    let grid = TimeGrid::new(0.0, 2.0, h).unwrap();
    let u = Inputs::constant(&[1.0]);
    let traj = implicit_euler(&sys, &u, &grid, &DVector::from_vec(vec![1.0, 3.0]), &SimOptions::default()).unwrap();
    let mut x1 = 1.0;
    for (k, y) in traj.outputs.iter().enumerate() {
        if k > 0 {
            x1 = (x1 + h) / (1.0 + 2.0 * h);
        }
        assert!((y[0] - 3.0 * x1).abs() < 1e-12, "step {k}");
    }
    let exact = 0.5 + 0.5 * (-4.0f64).exp();
    assert!((x1 - exact).abs() < 0.02);
}

#[test]
fn gas_steady_state_is_a_fixed_point() {
    let net = chain_network(&ChainSpec::new(8, 800.0, 0.5, Friction::Roughness(1e-5))).unwrap();
    let dae = assemble_dae(&net, GasOptions::default()).unwrap();
    let u = Inputs::constant(&[55e5, 25.0]);
    let (x0, res) = gas_steady_state(&dae, &u.value(0.0), &NewtonOptions::default()).unwrap();
    assert!(res < 1e-10);
    let grid = TimeGrid::new(0.0, 200.0, 10.0).unwrap();
    let opts = SimOptions { store_states: true, ..SimOptions::default() };
    let full = implicit_euler(&dae.sys, &u, &grid, &x0, &opts).unwrap();
    let dec = structured_decouple(&dae).unwrap();
    let init = dec.consistent_initialize(&x0, &u.value(0.0)).unwrap();
    let part = simulate_decoupled(&dec, &u, &grid, &init.xi_p, &opts, AlgebraicSchedule::EveryStep).unwrap();
    for x in full.states.iter().chain(&part.states) {
        assert!((x - &x0).amax() <= 1e-8 * x0.amax());
    }
}

#[test]
fn single_precision_pipeline_runs() {
    let d = |v: Vec<f32>, r, c| CsrMatrix::from_dense(&DMatrix::from_row_slice(r, c, &v), 0.0);
    let sys = DescriptorSystemF32::linear(
        d(vec![1.0, 0.0, 0.0, 0.0], 2, 2),
        d(vec![-1.0, 0.0, 1.0, -1.0], 2, 2),
        d(vec![0.0, 1.0], 2, 1),
        CsrMatrix::identity(2),
    )
    .unwrap();
    let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
    let dec = implicit_decouple(&sys, &ch).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
    let t = simulate_decoupled(&dec, &Inputs::constant(&[2.0]), &grid, &DVector::from_element(1, 0.0f32), &SimOptions::default(), AlgebraicSchedule::EveryStep)
        .unwrap();
    let y = t.outputs.last().unwrap();
    // x1 stays 0, x2 = x1 + u
    assert!(y[0].abs() < 1e-6 && (y[1] - 2.0).abs() < 1e-5);
}
