use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use nldae::decouple::{explicit_decouple, implicit_decouple, DecoupledSystem};
use nldae::gasnet::{split_e13, structured_decouple, STRUCTURED_TOL};
use nldae::integrate::Trajectory;
use nldae::io::{read_csv, write_csv, write_matrix_market};
use nldae::mor::{relative_error_lenient, Reducible};
use nldae::pencil::{build_projector_chain, finite_spectrum, ChainOptions, SpectrumOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::models::{ModelKind, Models, ReductionArgs};
use crate::setup::{NetworkArgs, ScenarioArgs, Setup};

/// Dense eigenvalue and singular value work is refused above this size.
const DENSE_LIMIT: usize = 3000;

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(v).expect("serializable") + "\n")?;
    Ok(())
}

fn output_header(m: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=m).map(|k| format!("y_{k}"))).collect()
}

fn write_trajectory(path: &Path, traj: &Trajectory<f64>) -> CliResult<()> {
    let m = traj.outputs.first().map_or(0, |y| y.len());
    let rows = traj.times.iter().zip(&traj.outputs).map(|(t, y)| std::iter::once(*t).chain(y.iter().copied()).collect());
    write_csv(path, &output_header(m), rows)?;
    Ok(())
}

fn timing(traj: &Trajectory<f64>) -> Value {
    json!({"wall_time": traj.wall_time, "newton_iterations": traj.newton_iterations,
           "max_newton_iterations": traj.max_newton_iterations(), "algebraic_solves": traj.algebraic_solves})
}

fn output_labels(setup: &Setup) -> Vec<String> {
    let net = &setup.net;
    let mut labels: Vec<String> = net.supply_nodes().iter().map(|&v| format!("mass flow at supply {}", net.nodes[v].id)).collect();
    labels.extend(net.demand_nodes().iter().map(|&v| format!("pressure at demand {}", net.nodes[v].id)));
    labels
}

fn dims(setup: &Setup, models: &mut Models) -> CliResult<Value> {
    let l = setup.dae.layout;
    let dec = models.decoupled()?;
    let (n_p, n_q) = (dec.n_p(), dec.n_q());
    let n_tilde = models.ode()?.dim();
    Ok(json!({
        "n": l.n(), "n_p": n_p, "n_q": n_q, "n_tilde": n_tilde,
        "pipes": l.n_e, "nodes": setup.net.nodes.len(), "m_s": l.n_s, "m_d": l.n_d,
        "inputs": l.inputs(), "outputs": l.outputs()
    }))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Finite spectra, singular values and nonlinearity norms of the DAE, ODE and decoupled pencils.
    #[arg(long)]
    pub spectrum: bool,
    /// Build the dense projector chain of the DAE pencil and report its residuals.
    #[arg(long)]
    pub projectors: bool,
    /// Seed of the random state at which the nonlinear terms are evaluated.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Reference pressure of that state in Pa.
    #[arg(long, default_value_t = 50e5)]
    pub pressure: f64,
    /// Directory for pencils (Matrix Market) and spectra (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn imag_range(l: &[num_complex::Complex<f64>]) -> Value {
    let lo = l.iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
    let hi = l.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
    let re = l.iter().map(|z| z.re.abs() / z.norm()).fold(0.0, f64::max);
    json!({"count": l.len(), "lambda_min_im": lo, "lambda_max_im": hi, "max_rel_real_part": re})
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<Value> {
    let start = Instant::now();
    let net = args.network.network()?;
    let dae = nldae::gasnet::assemble_dae(&net, args.network.options())?;
    let assembly_time = start.elapsed().as_secs_f64();
    let l = dae.layout;
    let t = Instant::now();
    let dec = structured_decouple(&dae)?;
    let decouple_time = t.elapsed().as_secs_f64();
    let ode = nldae::gasnet::assemble_ode(&dae)?;
    let split = split_e13(&dae, STRUCTURED_TOL);
    let mut report = json!({
        "dimensions": {"n": l.n(), "n_p": dec.n_p(), "n_q": dec.n_q(), "n_tilde": ode.dim(),
                       "pipes": l.n_e, "nodes": net.nodes.len(), "m_s": l.n_s, "m_d": l.n_d,
                       "ker_e13": split.k_q()},
        "index": 1,
        "f_q_vanishes": dec.f_q_vanishes(),
        "nnz": {"E": dae.sys.e.nnz(), "A": dae.sys.a.nnz(), "E_p": dec.e_p_matrix().nnz(), "A_p": dec.a_p.nnz(),
                "E_q": dec.e_q_matrix().nnz(), "M_ode": ode.mass.nnz(), "A_ode": ode.a.nnz()},
        "timing": {"assembly": assembly_time, "decouple": decouple_time},
    });
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        for (name, m) in [
            ("dae_E", &dae.sys.e),
            ("dae_A", &dae.sys.a),
            ("decoupled_E_p", &dec.e_p_matrix()),
            ("decoupled_A_p", &dec.a_p),
            ("ode_M", &ode.mass),
            ("ode_A", &ode.a),
        ] {
            write_matrix_market(&dir.join(format!("{name}.mtx")), m)?;
        }
    }
    if args.projectors {
        if l.n() > DENSE_LIMIT {
            return Err(CliError::Validation(format!("--projectors needs n ≤ {DENSE_LIMIT}, got {}", l.n())));
        }
        let ch = build_projector_chain(&dae.sys.e.to_dense(), &dae.sys.a.to_dense(), ChainOptions::default())?;
        let r = ch.residuals();
        report["projector_chain"] = json!({
            "index": ch.index, "rank_E0": ch.stage(0).rank_e,
            "residuals": {"idempotence": r.idempotence, "E_j Q_j": r.e_q, "recursion": r.recursion,
                          "E_1 P_0 - E_0": r.e1_p0, "A_1 - E_1 Q_0 - A_0": r.a1_identity, "Q_j Q_i": r.cross}
        });
    }
    if args.spectrum {
        if l.n() > DENSE_LIMIT {
            return Err(CliError::Validation(format!("--spectrum needs n ≤ {DENSE_LIMIT}, got {}", l.n())));
        }
        let opts = SpectrumOptions::default();
        let pencils: [(&str, DMatrix<f64>, DMatrix<f64>); 3] = [
            ("dae", dae.sys.e.to_dense(), dae.sys.a.to_dense()),
            ("ode", ode.mass.to_dense(), ode.a.to_dense()),
            ("decoupled", dec.e_p_matrix().to_dense(), dec.a_p.to_dense()),
        ];
        let mut spec_rows = Vec::new();
        let mut sv_rows = Vec::new();
        let mut spectra = serde_json::Map::new();
        for (k, (name, e, a)) in pencils.iter().enumerate() {
            let lam = finite_spectrum(e, a, opts)?;
            spectra.insert(name.to_string(), imag_range(&lam));
            spec_rows.extend(lam.iter().map(|z| vec![k as f64, z.re, z.im]));
            let sv = e.clone().svd(false, false).singular_values;
            let mut sv: Vec<f64> = sv.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            sv_rows.extend(sv.iter().enumerate().map(|(i, s)| vec![k as f64, (i + 1) as f64, *s]));
        }
        // nonlinear terms at one seeded state, mapped into each model's coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let mut x = DVector::zeros(l.n());
        for i in 0..2 * l.n_e {
            x[i] = rng.gen_range(-100.0..100.0);
        }
        for i in 2 * l.n_e..l.n() {
            x[i] = args.pressure * rng.gen_range(0.9..1.1);
        }
        let u = DVector::from_iterator(
            l.inputs(),
            x.as_slice()[l.p_s()].iter().copied().chain(std::iter::repeat_n(0.0, l.n_d)),
        );
        let f_dae = dae.sys.f.eval(&dae.sys.e.mul_vec(&x))?.norm();
        let f_ode = ode.lifted().expect("gas ODE is nonlinear").eval(&ode.state_from_dae(&x), &u)?.norm();
        let xi_p = dec.p0.left_inverse.mul_vec(&x);
        let f_dec = dae.sys.f.eval(&dec.lift.mul_vec(&xi_p))?.norm();
        let f_dec_p = dec.f_p(&xi_p)?.norm();
        report["spectrum"] = Value::Object(spectra);
        report["nonlinearity_norm"] = json!({"seed": args.seed, "dae": f_dae, "ode": f_ode, "decoupled": f_dec, "decoupled_projected": f_dec_p});
        if let Some(dir) = &args.out {
            let h = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
            write_csv(&dir.join("spectrum.csv"), &h(&["model", "re", "im"]), spec_rows.into_iter())?;
            write_csv(&dir.join("singular_values.csv"), &h(&["model", "k", "sigma"]), sv_rows.into_iter())?;
            write_json(&dir.join("spectrum_models.json"), &json!({"0": "dae", "1": "ode", "2": "decoupled"}))?;
        }
    }
    if let Some(dir) = &args.out {
        write_json(&dir.join("analysis.json"), &report)?;
    }
    Ok(report)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Sparse block-structured decoupling of the gas network.
    Structured,
    /// Dense projector chain with the implicit form.
    Implicit,
    /// Dense projector chain with the explicit form.
    Explicit,
}

#[derive(Args, Debug)]
pub struct DecoupleArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, value_enum, default_value_t = Method::Structured)]
    pub method: Method,
    /// Drop tolerance of the exported matrices.
    #[arg(long, default_value_t = 0.0)]
    pub drop_tol: f64,
    /// Directory for the Matrix Market bundle.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn decouple(args: &DecoupleArgs) -> CliResult<Value> {
    let net = args.network.network()?;
    let dae = nldae::gasnet::assemble_dae(&net, args.network.options())?;
    let start = Instant::now();
    let dec: DecoupledSystem<f64> = match args.method {
        Method::Structured => structured_decouple(&dae)?,
        dense => {
            if dae.layout.n() > DENSE_LIMIT {
                return Err(CliError::Validation(format!("dense decoupling needs n ≤ {DENSE_LIMIT}, got {}", dae.layout.n())));
            }
            let ch = build_projector_chain(&dae.sys.e.to_dense(), &dae.sys.a.to_dense(), ChainOptions::default())?;
            if dense == Method::Implicit {
                implicit_decouple(&dae.sys, &ch)?
            } else {
                explicit_decouple(&dae.sys, &ch)?
            }
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let (cond_p, cond_q) = dec.check_conditioning()?;
    let report = json!({
        "n": dec.n(), "n_p": dec.n_p(), "n_q": dec.n_q(),
        "form": match args.method { Method::Explicit => "explicit", _ => "implicit" },
        "f_q_vanishes": dec.f_q_vanishes(),
        "condition_estimate": {"E_p": cond_p, "E_q": cond_q},
        "decouple_time": secs,
    });
    if let Some(dir) = &args.out {
        dec.export(dir, args.drop_tol)?;
        write_json(&dir.join("decouple.json"), &report)?;
    }
    Ok(report)
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Decoupled)]
    pub model: ModelKind,
    #[command(flatten)]
    pub reduction: ReductionArgs,
    /// Run directory for `trajectory.csv` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Simulates one model into `dir`; returns the run manifest.
fn run_into(dir: &Path, kind: ModelKind, models: &mut Models, red: &ReductionArgs, meta: Value) -> CliResult<(Value, Trajectory<f64>)> {
    ensure_dir(dir)?;
    let setup = models.setup;
    let mut manifest = json!({
        "model": kind.name(),
        "outputs": output_labels(setup),
        "grid": {"t0": setup.scenario.grid.t0, "t_end": setup.scenario.grid.t_end, "dt": setup.scenario.grid.dt},
        "config": meta,
    });
    let traj = if kind.is_reduced() {
        let run = models.run_reduced(kind, red)?;
        manifest["summary"] = run.summary();
        manifest["timing"] = json!({"online": timing(&run.traj), "parent": timing(&run.parent.traj)});
        run.traj
    } else {
        let run = models.run_full(kind)?;
        manifest["timing"] = json!({"simulation": timing(&run.traj), "build": run.build_time, "assembly": setup.assembly_time});
        run.traj
    };
    manifest["dimensions"] = dims(setup, models)?;
    write_trajectory(&dir.join("trajectory.csv"), &traj)?;
    write_json(&dir.join("run.json"), &manifest)?;
    Ok((manifest, traj))
}

fn config_of(net: &NetworkArgs, sc: &ScenarioArgs, red: &ReductionArgs) -> Value {
    json!({"network": net.describe(), "scenario": sc.scenario.as_ref().map(|p| p.display().to_string()),
           "supply": sc.supply, "demand": sc.demand, "init": format!("{:?}", sc.init).to_lowercase(),
           "reduction": red.describe()})
}

pub fn simulate(args: &SimulateArgs) -> CliResult<Value> {
    let setup = Setup::new(&args.network, &args.scenario)?;
    let mut models = Models::new(&setup);
    let meta = config_of(&args.network, &args.scenario, &args.reduction);
    let (manifest, _) = run_into(&args.out, args.model, &mut models, &args.reduction, meta)?;
    Ok(manifest)
}

#[derive(Args, Debug)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Ipod)]
    pub model: ModelKind,
    #[command(flatten)]
    pub reduction: ReductionArgs,
    /// Also reduce with every size in this list (all bases set to it, DEIM sizes too unless given).
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    /// Write the reduced-model bundle (I-POD only).
    #[arg(long)]
    pub bundle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

const TABLE_HEADER: &str = "ROM,r,% Red.,Output error,Speed-up";

pub fn reduce(args: &ReduceArgs) -> CliResult<Value> {
    if !args.model.is_reduced() {
        return Err(CliError::Validation(format!("{} is not a reduced model", args.model.name())));
    }
    ensure_dir(&args.out)?;
    let setup = Setup::new(&args.network, &args.scenario)?;
    let mut models = Models::new(&setup);
    let run = models.run_reduced(args.model, &args.reduction)?;
    write_trajectory(&args.out.join("trajectory.csv"), &run.traj)?;
    write_trajectory(&args.out.join("reference.csv"), &run.parent.traj)?;
    fs::write(args.out.join("table.csv"), format!("{TABLE_HEADER}\n{}\n", run.table_row()))?;
    let mut summary = run.summary();
    summary["dimensions"] = dims(&setup, &mut models)?;
    summary["config"] = config_of(&args.network, &args.scenario, &args.reduction);
    if args.bundle {
        let rom = run
            .irom
            .as_ref()
            .ok_or_else(|| CliError::Validation("--bundle is only available for ipod".into()))?;
        let meta = json!({"energy": args.reduction.energy, "snapshots": run.parent.traj.times.len(),
                          "snapshot_source": "training run of the decoupled model on the scenario itself",
                          "config": summary["config"].clone()});
        rom.export(&args.out.join("bundle"), meta)?;
    }
    if !args.sweep.is_empty() {
        let mut rows = Vec::new();
        let mut entries = Vec::new();
        for &k in &args.sweep {
            let red = args.reduction.with_size(k);
            match models.run_reduced(args.model, &red) {
                Ok(r) => {
                    rows.push(vec![k as f64, r.r as f64, r.error.groups[1], r.error.groups[0], r.error.output_error]);
                    entries.push(json!({"size": k, "r": r.r, "output_error": r.error.output_error, "speedup": r.speedup()}));
                }
                Err(e) => {
                    rows.push(vec![k as f64, f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
                    entries.push(json!({"size": k, "error": e.to_json()}));
                }
            }
        }
        let header = ["size", "r", "pressure_error", "flow_error", "output_error"].map(String::from);
        write_csv(&args.out.join("sweep.csv"), &header, rows.into_iter())?;
        summary["sweep"] = Value::Array(entries);
    }
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("{TABLE_HEADER}\n{}", run.table_row());
    Ok(summary)
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Models to simulate; the first is the reference.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelKind::Dae, ModelKind::Ode, ModelKind::Decoupled])]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub reduction: ReductionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn compare(args: &CompareArgs) -> CliResult<Value> {
    if args.models.len() < 2 {
        return Err(CliError::Validation("compare needs at least two models".into()));
    }
    let setup = Setup::new(&args.network, &args.scenario)?;
    let mut models = Models::new(&setup);
    let meta = config_of(&args.network, &args.scenario, &args.reduction);
    let mut runs = Vec::new();
    for &kind in &args.models {
        let dir = args.out.join(kind.name());
        let (manifest, traj) = run_into(&dir, kind, &mut models, &args.reduction, meta.clone())?;
        runs.push((kind, dir, manifest, traj));
    }
    let groups = setup.dae.layout.output_groups();
    let mut pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let e = relative_error_lenient(&runs[i].3.outputs, &runs[j].3.outputs, &groups)?;
            pairs.push(json!({"reference": runs[i].0.name(), "model": runs[j].0.name(),
                              "pressure_error": e.groups[1], "flow_error": e.groups[0], "output_error": e.output_error}));
        }
    }
    let dirs: Vec<PathBuf> = runs.iter().map(|r| r.1.clone()).collect();
    let merged = export_runs(&dirs, &args.out)?;
    let report = json!({"pairs": pairs, "runs": runs.iter().map(|r| r.2.clone()).collect::<Vec<_>>(), "merged": merged});
    write_json(&args.out.join("compare.json"), &report)?;
    Ok(json!({"pairs": pairs, "out": args.out.display().to_string()}))
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Run directories holding `trajectory.csv` and `run.json`.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export(args: &ExportArgs) -> CliResult<Value> {
    export_runs(&args.runs, &args.out)
}

/// Merges run directories into `merged.csv` plus `manifest.json`.
fn export_runs(runs: &[PathBuf], out: &Path) -> CliResult<Value> {
    let missing: Vec<String> = runs
        .iter()
        .flat_map(|d| ["trajectory.csv", "run.json"].map(|f| d.join(f)))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }
    let mut names: Vec<String> = Vec::new();
    let mut manifests = BTreeMap::new();
    let mut tables = Vec::new();
    for dir in runs {
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", dir.join("run.json").display())))?;
        let model = manifest["model"].as_str().unwrap_or("run").to_string();
        let name = if names.contains(&model) {
            dir.file_name().map_or(model.clone(), |f| f.to_string_lossy().into_owned())
        } else {
            model
        };
        tables.push(read_csv(&dir.join("trajectory.csv"))?);
        manifests.insert(name.clone(), manifest);
        names.push(name);
    }
    let times: Vec<f64> = tables[0].1.iter().map(|r| r[0]).collect();
    for (name, (_, rows)) in names.iter().zip(&tables) {
        let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        if t != times {
            return Err(CliError::Validation(format!("run '{name}' has a different time grid")));
        }
    }
    let mut header = vec!["t".to_string()];
    for (name, (h, _)) in names.iter().zip(&tables) {
        header.extend(h.iter().skip(1).map(|c| if runs.len() == 1 { c.clone() } else { format!("{c}_{name}") }));
    }
    let rows = (0..times.len()).map(|k| {
        let mut row = vec![times[k]];
        for (_, rows) in &tables {
            row.extend_from_slice(&rows[k][1..]);
        }
        row
    });
    ensure_dir(out)?;
    write_csv(&out.join("merged.csv"), &header, rows)?;
    let first = manifests.get(&names[0]).cloned().unwrap_or(Value::Null);
    let manifest = json!({
        "runs": names,
        "columns": header,
        "dimensions": first["dimensions"].clone(),
        "timing": manifests.iter().map(|(k, v)| (k.clone(), v["timing"].clone())).collect::<serde_json::Map<_, _>>(),
        "summaries": manifests.iter().filter(|(_, v)| !v["summary"].is_null())
            .map(|(k, v)| (k.clone(), v["summary"].clone())).collect::<serde_json::Map<_, _>>(),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
