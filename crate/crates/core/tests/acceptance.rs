//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nldae::decouple::{explicit_decouple, implicit_decouple, DecoupledSystem};
use nldae::gasnet::*;
use nldae::integrate::*;
use nldae::mor::*;
use nldae::pencil::{build_projector_chain, finite_spectrum, ChainOptions, SpectrumOptions};
use nldae::sparse::CsrMatrix;
use nldae::DescriptorSystemF64;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn load_network(name: &str) -> GasNetwork {
    let text = std::fs::read_to_string(data_dir().join("networks").join(format!("{name}.json"))).unwrap();
    refine_network(&parse_network(&text).unwrap(), 1).unwrap()
}

const DATA_NETWORKS: [&str; 4] = ["ex1_n4", "ex1_n25", "ex3_n55", "ex1_n121"];

fn tree_network() -> GasNetwork {
    parse_network(
        r#"{"gas": {"Rs": 518.26},
        "nodes": [{"id": "S", "kind": "supply"}, {"id": "a", "kind": "interior", "height": 5},
                  {"id": "b", "kind": "demand", "height": 12}, {"id": "c", "kind": "interior"},
                  {"id": "d", "kind": "demand", "height": -3}, {"id": "e", "kind": "demand"}],
        "pipes": [{"id": "1", "from": "S", "to": "a", "length": 3000, "diameter": 0.6, "roughness": 1e-5},
                  {"id": "2", "from": "a", "to": "b", "length": 2000, "diameter": 0.4, "roughness": 1e-5},
                  {"id": "3", "from": "a", "to": "c", "length": 2500, "diameter": 0.5, "roughness": 1e-5},
                  {"id": "4", "from": "c", "to": "d", "length": 1500, "diameter": 0.3, "roughness": 1e-5},
                  {"id": "5", "from": "c", "to": "e", "length": 1000, "diameter": 0.3, "roughness": 1e-5}]}"#,
    )
    .unwrap()
}

fn chain(n: usize, length: f64, diameter: f64, friction: Friction, rs: f64, slope: f64) -> GasNetwork {
    let mut spec = ChainSpec::new(n, length, diameter, friction);
    spec.gas.rs = rs;
    spec.slope = slope;
    chain_network(&spec).unwrap()
}

/// Every gas network used by the structural criteria.
fn gas_networks() -> Vec<(String, GasNetwork)> {
    let mut nets: Vec<(String, GasNetwork)> = DATA_NETWORKS.iter().map(|n| (n.to_string(), load_network(n))).collect();
    nets.push(("tree6".into(), tree_network()));
    for n in [1, 5, 20] {
        nets.push((format!("chain{n}"), chain(n, 500.0, 0.6, Friction::Roughness(1e-5), 518.26, 2.0)));
    }
    nets
}

fn max_pairwise_match(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d / x.norm().max(f64::MIN_POSITIVE));
    }
    worst
}

fn criterion_1() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [1usize, 10, 100, 5000] {
        let t = Instant::now();
        let net = chain(n, 0.726, 1.422, Friction::Roughness(1e-6), 1530.0, 0.0);
        let dae = assemble_dae(&net, GasOptions::default()).unwrap();
        let dec = structured_decouple(&dae).unwrap();
        let ode = assemble_ode(&dae).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let got = (dae.layout.n(), dec.n_p(), dec.n_q(), ode.dim());
        let want = (3 * n + 1, 2 * n, n + 1, 2 * n);
        ok &= got == want && (n > 100 || secs < 5.0);
        lines.push(format!("N={n}: (n, n_p, n_q, ñ)={got:?} in {secs:.2}s"));
    }
    let table = [(4, 2, 2, 2), (25, 16, 9, 16), (55, 36, 19, 36), (121, 80, 41, 80)];
    for (name, want) in DATA_NETWORKS.iter().zip(table) {
        let dae = assemble_dae(&load_network(name), GasOptions::default()).unwrap();
        let dec = structured_decouple(&dae).unwrap();
        let got = (dae.layout.n(), dec.n_p(), dec.n_q(), assemble_ode(&dae).unwrap().dim());
        ok &= got == want;
        lines.push(format!("{name}: {got:?}"));
    }
    check(ok, lines.join("; "))
}

fn random_index1_pencil(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = rng.gen_range(1..n);
    let mut well_conditioned = |n: usize| {
        let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        DMatrix::identity(n, n) + r * (0.4 / (n as f64).sqrt())
    };
    let t = well_conditioned(n);
    let s = well_conditioned(n);
    let j = well_conditioned(k) * 2.0 - DMatrix::identity(k, k) * 3.0;
    let mut d_e = DMatrix::zeros(n, n);
    let mut d_a = DMatrix::identity(n, n);
    d_e.view_mut((0, 0), (k, k)).fill_with_identity();
    d_a.view_mut((0, 0), (k, k)).copy_from(&j);
    (&t * d_e * &s, &t * d_a * &s)
}

/// Sparse residuals of the chain identities for the structured projector `Q_0`.
fn structured_residuals(dae: &GasDae, dec: &DecoupledSystem<f64>) -> f64 {
    let (e0, a0) = (&dae.sys.e, &dae.sys.a);
    let n = dae.layout.n();
    let scale = e0.norm_fro() + a0.norm_fro();
    let q = dec.q0.basis.matmul(&dec.q0.left_inverse);
    let p = CsrMatrix::identity(n).add_scaled(1.0, &q, -1.0);
    let e1 = e0.add_scaled(1.0, &a0.matmul(&q), -1.0);
    let a1 = a0.matmul(&p);
    let idem = q.matmul(&q).add_scaled(1.0, &q, -1.0).norm_fro();
    let eq = e0.matmul(&q).norm_fro() / scale;
    let e1p0 = e1.matmul(&p).add_scaled(1.0, e0, -1.0).norm_fro() / scale;
    let a1id = a1.add_scaled(1.0, &e1.matmul(&q), -1.0).add_scaled(1.0, a0, -1.0).norm_fro() / scale;
    let stored = dec.e1.as_ref().unwrap().add_scaled(1.0, &e1, -1.0).norm_fro() / scale;
    [idem, eq, e1p0, a1id, stored].into_iter().fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut worst_random = 0.0f64;
    for case in 0..50 {
        let n = rng.gen_range(2..=40);
        let (e, a) = random_index1_pencil(&mut rng, n);
        let ch = build_projector_chain(&e, &a, ChainOptions::default()).map_err(|err| format!("pencil {case}: {err}"))?;
        if ch.index != 1 {
            return Err(format!("pencil {case} (n={n}) reported index {}", ch.index));
        }
        worst_random = worst_random.max(ch.residuals().max());
        let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let sys = DescriptorSystemF64::linear(
            CsrMatrix::from_dense(&e, 0.0),
            CsrMatrix::from_dense(&a, 0.0),
            CsrMatrix::from_dense(&b, 0.0),
            CsrMatrix::from_dense(&c, 0.0),
        )
        .unwrap();
        implicit_decouple(&sys, &ch).map_err(|err| format!("pencil {case}: implicit {err}"))?;
        explicit_decouple(&sys, &ch).map_err(|err| format!("pencil {case}: explicit {err}"))?;
    }
    let mut worst_gas_dense = 0.0f64;
    let mut worst_gas_structured = 0.0f64;
    let mut nets = gas_networks();
    nets.push(("chain500".into(), chain(500, 0.726, 1.422, Friction::Roughness(1e-6), 1530.0, 0.0)));
    for (name, net) in &nets {
        let dae = assemble_dae(net, GasOptions::default()).unwrap();
        if dae.layout.n() <= 200 {
            let ch = build_projector_chain(&dae.sys.e.to_dense(), &dae.sys.a.to_dense(), ChainOptions::default())
                .map_err(|err| format!("{name}: {err}"))?;
            if ch.index != 1 {
                return Err(format!("{name}: dense chain index {}", ch.index));
            }
            worst_gas_dense = worst_gas_dense.max(ch.residuals().max());
            implicit_decouple(&dae.sys, &ch).map_err(|err| format!("{name}: implicit {err}"))?;
        }
        let dec = structured_decouple(&dae).map_err(|err| format!("{name}: structured {err}"))?;
        worst_gas_structured = worst_gas_structured.max(structured_residuals(&dae, &dec));
    }
    let worst = worst_random.max(worst_gas_dense).max(worst_gas_structured);
    check(
        worst <= tol,
        format!(
            "max residual {worst:.2e} (random {worst_random:.2e}, gas dense {worst_gas_dense:.2e}, gas structured {worst_gas_structured:.2e}); E_p/E_q nonsingular on all {} pencils and {} networks",
            50,
            nets.len()
        ),
    )
}

fn example2_inputs() -> Inputs {
    Inputs::new(vec![
        Signal::Constant(84e5),
        Signal::Pwl(vec![(0.0, 50.0), (200.0, 50.0), (400.0, 80.0), (700.0, 80.0), (800.0, 60.0), (1000.0, 60.0)]),
    ])
    .unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let net = chain(200, 18.15, 1.422, Friction::Roughness(1.5e-6), 518.26, 0.0);
    let dae = assemble_dae(&net, GasOptions::default()).unwrap();
    let inputs = example2_inputs();
    let grid = TimeGrid::new(0.0, 1000.0, 8.0).unwrap();
    let (x0, _) = gas_steady_state(&dae, &inputs.value(0.0), &NewtonOptions::default()).unwrap();
    let opts = SimOptions::default();
    let t_dae = implicit_euler(&dae.sys, &inputs, &grid, &x0, &opts).unwrap();
    let ode = assemble_ode(&dae).unwrap();
    let t_ode = implicit_euler(&ode, &inputs, &grid, &ode.state_from_dae(&x0), &opts).unwrap();
    let dec = structured_decouple(&dae).unwrap();
    let init = dec.consistent_initialize(&x0, &inputs.value(0.0)).unwrap();
    let t_dec = simulate_decoupled(&dec, &inputs, &grid, &init.xi_p, &opts, AlgebraicSchedule::EveryStep).unwrap();
    let groups = dae.layout.output_groups();
    let err = |a: &Trajectory<f64>, b: &Trajectory<f64>| relative_error(&a.outputs, &b.outputs, &groups).unwrap();
    let (ode_dae, dec_dae, dec_ode) = (err(&t_dae, &t_ode), err(&t_dae, &t_dec), err(&t_ode, &t_dec));
    let worst = ode_dae.output_error.max(dec_dae.output_error).max(dec_ode.output_error);
    check(
        worst <= 1e-4,
        format!(
            "200 pipes, dt=8: ODE vs DAE {:.2e}/{:.2e}, decoupled vs DAE {:.2e}/{:.2e}, decoupled vs ODE {:.2e} (flow/pressure) in {:.1}s",
            ode_dae.groups[0],
            ode_dae.groups[1],
            dec_dae.groups[0],
            dec_dae.groups[1],
            dec_ode.output_error,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut nets: Vec<(String, GasNetwork)> = [1usize, 5, 20, 50]
        .iter()
        .map(|&n| (format!("chain{n}"), chain(n, 100.0, 0.5, Friction::Lambda(0.01), 518.26, 0.0)))
        .collect();
    nets.extend(DATA_NETWORKS.iter().take(3).map(|n| (n.to_string(), load_network(n))));
    let opts = SpectrumOptions::default();
    for (name, net) in nets {
        let dae = assemble_dae(&net, GasOptions::default()).unwrap();
        let dec = structured_decouple(&dae).unwrap();
        let ode = assemble_ode(&dae).unwrap();
        let full = finite_spectrum(&dae.sys.e.to_dense(), &dae.sys.a.to_dense(), opts).unwrap();
        let dcp = finite_spectrum(&dec.e_p_matrix().to_dense(), &dec.a_p.to_dense(), opts).unwrap();
        let odes = finite_spectrum(&ode.mass.to_dense(), &ode.a.to_dense(), opts).unwrap();
        let same_count = full.len() == dcp.len() && full.len() == odes.len() && full.len() == dec.n_p();
        let d_dec = if same_count { max_pairwise_match(&full, &dcp) } else { f64::INFINITY };
        let d_ode = if same_count { max_pairwise_match(&full, &odes) } else { f64::INFINITY };
        let re = full.iter().chain(&dcp).map(|z| z.re.abs() / z.norm()).fold(0.0, f64::max);
        let (lmin, lmax) = full.iter().fold((f64::INFINITY, 0.0f64), |(a, b), z| (a.min(z.im), b.max(z.im)));
        ok &= same_count && d_dec <= 1e-8 && d_ode <= 1e-8 && re <= 1e-8;
        lines.push(format!(
            "{name}: {} eigenvalues in [{lmin:.4}i, {lmax:.4}i], rel diff dec {d_dec:.1e} ode {d_ode:.1e}, max |Re λ|/|λ| {re:.1e}",
            full.len()
        ));
    }
    check(ok, lines.join("; "))
}

/// Random physical state: pressures within ±40 % of `p_ref`, flows of either sign.
fn random_state(rng: &mut ChaCha8Rng, l: &GasLayout, p_ref: f64) -> DVector<f64> {
    let mut x = DVector::zeros(l.n());
    for i in 0..2 * l.n_e {
        x[i] = rng.gen_range(-200.0..200.0);
    }
    for i in 2 * l.n_e..l.n() {
        x[i] = p_ref * rng.gen_range(0.6..1.4);
    }
    x
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_fq = 0.0f64;
    let mut worst_ker = 0.0f64;
    let mut count = 0;
    let mut nets = gas_networks();
    nets.push(("chain100".into(), chain(100, 50.0, 0.8, Friction::Roughness(1e-5), 518.26, 1.0)));
    for (name, net) in &nets {
        let dae = assemble_dae(net, GasOptions::default()).unwrap();
        let dec = structured_decouple(&dae).unwrap();
        if !dec.f_q_vanishes() {
            return Err(format!("{name}: f_q not structurally zero"));
        }
        let l = dae.layout;
        let q_hat_t = dec.q_hat.as_ref().unwrap().transpose();
        let split = split_e13(&dae, STRUCTURED_TOL);
        for _ in 0..100 {
            let x = random_state(&mut rng, &l, 50e5);
            let xi_p = dec.p0.left_inverse.mul_vec(&x);
            let ft = dae.sys.f.eval(&dec.lift.mul_vec(&xi_p)).unwrap();
            // the projection itself, not the structural flag
            let fq = q_hat_t.mul_vec(&ft);
            worst_fq = worst_fq.max(fq.amax() / ft.amax().max(1.0));
            let w = DVector::from_fn(split.k_q(), |_, _| rng.gen_range(-1e6..1e6));
            let mut y = x.clone();
            let dv = split.q.basis.mul_vec(&w);
            for (k, v) in dv.iter().enumerate() {
                y[2 * l.n_e + k] += v;
            }
            let f0 = dae.sys.f.eval(&dae.sys.e.mul_vec(&x)).unwrap();
            let f1 = dae.sys.f.eval(&dae.sys.e.mul_vec(&y)).unwrap();
            worst_ker = worst_ker.max((f1 - &f0).amax() / f0.amax().max(1.0));
            count += 1;
        }
    }
    check(
        worst_fq == 0.0 && worst_ker <= 1e-12,
        format!(
            "{count} random states on {} networks: max |f_q| {worst_fq:.1e}, max relative change of f along Ker E13 {worst_ker:.1e}",
            nets.len()
        ),
    )
}

fn example5_inputs() -> Inputs {
    Inputs::new(vec![
        Signal::Constant(50e5),
        Signal::Pwl(vec![
            (0.0, 100.0),
            (20000.0, 100.0),
            (20250.0, 150.0),
            (50000.0, 150.0),
            (50250.0, 80.0),
            (86500.0, 80.0),
        ]),
    ])
    .unwrap()
}

struct Example5 {
    dae: GasDae,
    dec: DecoupledSystem<f64>,
    xi_p0: DVector<f64>,
}

fn example5(n: usize, inputs: &Inputs) -> Example5 {
    let net = chain(n, 0.726, 1.422, Friction::Roughness(1e-6), 1530.0, 0.0);
    let dae = assemble_dae(&net, GasOptions::default()).unwrap();
    let dec = structured_decouple(&dae).unwrap();
    let (x0, _) = gas_steady_state(&dae, &inputs.value(0.0), &NewtonOptions::default()).unwrap();
    let xi_p0 = dec.consistent_initialize(&x0, &inputs.value(0.0)).unwrap().xi_p;
    Example5 { dae, dec, xi_p0 }
}

fn criterion_6() -> Outcome {
    let inputs = example5_inputs();
    let grid = TimeGrid::new(0.0, 86500.0, 250.0).unwrap();
    let opts = SimOptions::default();
    let ex = example5(500, &inputs);
    let groups = ex.dae.layout.output_groups();
    // best of several runs to keep the timing ratio robust to scheduler noise
    let timed = |f: &dyn Fn() -> Trajectory<f64>| {
        let mut best = f();
        for _ in 0..2 {
            let t = f();
            if t.wall_time < best.wall_time {
                best = t;
            }
        }
        best
    };
    let full = timed(&|| simulate_decoupled(&ex.dec, &inputs, &grid, &ex.xi_p0, &opts, AlgebraicSchedule::EveryStep).unwrap());
    let snaps = decoupled_snapshots(&ex.dec, &inputs, &grid, &ex.xi_p0, &opts).unwrap();
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, f64)> = None;
    for (rp, rq, m) in [(2, 4, 2), (3, 3, 3), (4, 4, 4), (3, 6, 3)] {
        let o = IpodOptions { r_p: PodCriterion::Rank(rp), r_q: PodCriterion::Rank(rq), m_p: Some(m), ..Default::default() };
        let outcome = ipod_reduce(&ex.dec, &snaps, &o).and_then(|rom| {
            let x_r0 = rom.v_p.transpose() * &ex.xi_p0;
            simulate_irom(&rom, &inputs, &grid, &x_r0, &opts).map(|_| (rom, x_r0))
        });
        match outcome {
            Ok((rom, x_r0)) => {
                let tr = timed(&|| simulate_irom(&rom, &inputs, &grid, &x_r0, &opts).unwrap());
                let e = relative_error(&full.outputs, &tr.outputs, &groups).unwrap().output_error;
                let speedup = full.wall_time / tr.wall_time;
                rows.push(format!("(r_p,r_q,m)=({rp},{rq},{m}) err {e:.2e} speed-up {speedup:.0}"));
                if rom.r() <= 20 && e < 1e-4 && speedup > 1.0 && best.is_none_or(|b| e < b.1) {
                    best = Some((rom.r(), e, speedup));
                }
            }
            Err(err) => rows.push(format!("(r_p,r_q,m)=({rp},{rq},{m}) failed: {err}")),
        }
    }

    // Galerkin consistency with full bases and every nonlinearity row
    let short = TimeGrid::new(0.0, 2500.0, 250.0).unwrap();
    let parent = simulate_decoupled(&ex.dec, &inputs, &short, &ex.xi_p0, &opts, AlgebraicSchedule::EveryStep).unwrap();
    let eye_p = DMatrix::identity(ex.dec.n_p(), ex.dec.n_p());
    let eye_q = DMatrix::identity(ex.dec.n_q(), ex.dec.n_q());
    let rom = build_irom(&ex.dec, &eye_p, &eye_q, None, None).unwrap();
    let tr = simulate_irom(&rom, &inputs, &short, &ex.xi_p0, &opts).unwrap();
    let full_basis = relative_error(&parent.outputs, &tr.outputs, &groups).unwrap().output_error;

    // online cost: the same sizes pick the same number of rows at any n
    let o = IpodOptions { r_p: PodCriterion::Rank(3), r_q: PodCriterion::Rank(3), m_p: Some(3), ..Default::default() };
    let mut per_eval = Vec::new();
    let mut per_step = Vec::new();
    for n in [250, 500, 1000] {
        let ex = example5(n, &inputs);
        let snaps = decoupled_snapshots(&ex.dec, &inputs, &grid, &ex.xi_p0, &opts).unwrap();
        let rom = ipod_reduce(&ex.dec, &snaps, &o).unwrap();
        rom.reset_counters();
        let tr = simulate_irom(&rom, &inputs, &grid, &(rom.v_p.transpose() * &ex.xi_p0), &opts).unwrap();
        per_eval.push(rom.diff.nl.as_ref().map_or(0, |nl| nl.rows_per_eval()));
        per_step.push((rom.row_evaluations() as f64 / grid.steps as f64, tr.max_newton_iterations()));
    }
    let bounded = per_step.iter().zip(&per_eval).all(|((s, it), r)| *s <= (*r * (*it + 2)) as f64);
    let independent = per_eval.windows(2).all(|w| w[0] == w[1]) && bounded;

    let ok = best.is_some() && full_basis <= 1e-10 && independent;
    let summary = match best {
        Some((r, e, s)) => format!("best r={r} err {e:.2e} speed-up {s:.0}"),
        None => "no configuration met r ≤ 20, error < 1e-4, speed-up > 1".into(),
    };
    check(
        ok,
        format!(
            "500 pipes, full decoupled {:.3}s: {summary} [{}]; full-basis I-ROM error {full_basis:.1e}; f rows per evaluation at n=751/1501/3001: {per_eval:?}, per step {:?}",
            full.wall_time,
            rows.join(", "),
            per_step.iter().map(|(s, _)| format!("{s:.1}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut cases: Vec<(String, GasNetwork, f64, f64)> = vec![("tree6".into(), tree_network(), 60e5, 12.0)];
    cases.push(("ex1_n25".into(), load_network("ex1_n25"), 700e5, 45.0));
    cases.push(("ex3_n55".into(), load_network("ex3_n55"), 4450e5, 5.0));
    cases.push(("ex1_n121".into(), load_network("ex1_n121"), 3.45e9, 10.0));
    for (name, net, s, d) in cases {
        let dae = assemble_dae(&net, GasOptions::default()).unwrap();
        let l = dae.layout;
        let demand: Vec<f64> = (0..l.n_d).map(|k| d * (1.0 + 0.25 * k as f64)).collect();
        let mut u = vec![s];
        u.extend(&demand);
        let mut u_start = vec![s];
        u_start.extend(demand.iter().map(|v| 0.5 * v));
        let (x0, _) = gas_steady_state(&dae, &DVector::from_vec(u_start), &NewtonOptions::default()).unwrap();
        let grid = TimeGrid::new(0.0, 40000.0, 20.0).unwrap();
        let tr = implicit_euler(
            &dae.sys,
            &Inputs::constant(&u),
            &grid,
            &x0,
            &SimOptions { store_states: true, ..Default::default() },
        )
        .unwrap();
        let x = tr.states.last().unwrap();
        let qm = x.rows(0, l.n_e).norm();
        let qp = x.rows(l.n_e, l.n_e).norm();
        let total: f64 = demand.iter().sum();
        let supply = tr.outputs.last().unwrap()[0];
        let mismatch = (supply - total).abs() / total;
        ok &= qm <= 1e-6 * qp && mismatch <= 1e-3;
        lines.push(format!("{name}: ‖q−‖/‖q+‖ {:.1e}, supply {supply:.4} vs demand {total:.4}", qm / qp));
    }
    check(ok, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let net = chain(10, 500.0, 0.5, Friction::Lambda(0.0), 518.26, 0.0);
    let dae = assemble_dae(&net, GasOptions::default()).unwrap();
    let inputs = Inputs::new(vec![Signal::Constant(50e5), Signal::Pwl(vec![(0.0, 0.0), (40.0, 20.0)])]).unwrap();
    let (x0, _) = gas_steady_state(&dae, &inputs.value(0.0), &NewtonOptions::default()).unwrap();
    let t_end = 80.0;
    let h_ref = 0.4 / 256.0;
    let opts = SimOptions::default();
    let reference = implicit_euler(&dae.sys, &inputs, &TimeGrid::new(0.0, t_end, h_ref).unwrap(), &x0, &opts).unwrap();
    let groups = dae.layout.output_groups();
    let mut errors = Vec::new();
    for k in 0..4 {
        let dt = 0.4 / 2f64.powi(k);
        let tr = implicit_euler(&dae.sys, &inputs, &TimeGrid::new(0.0, t_end, dt).unwrap(), &x0, &opts).unwrap();
        let stride = (dt / h_ref).round() as usize;
        let sampled: Vec<_> = reference.outputs.iter().step_by(stride).cloned().collect();
        errors.push(relative_error(&sampled, &tr.outputs, &groups).unwrap().output_error);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    check(
        ratios.iter().all(|r| (1.8..=2.2).contains(r)),
        format!(
            "errors {:?}, halving ratios {:?}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("dimension bookkeeping", criterion_1),
        ("projector chain identities", criterion_2),
        ("DAE/ODE/decoupled equivalence", criterion_3),
        ("spectrum preservation", criterion_4),
        ("structural nonlinearity", criterion_5),
        ("I-POD reduction", criterion_6),
        ("steady-state conservation", criterion_7),
        ("implicit Euler convergence order", criterion_8),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("ACCEPTANCE {} PASS {name} ({secs:.1}s): {msg}", k + 1),
            Err(msg) => {
                println!("ACCEPTANCE {} FAIL {name} ({secs:.1}s): {msg}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    println!("ACCEPTANCE {} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
