use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use serde_json::json;

use norm_core::datagen::{
    make_darcy_dataset, make_heat_dataset, read_dataset, write_dataset, DarcyOptions, Dataset, DirichletBc, Split,
    DATASET_MAGIC,
};
use norm_core::mesh::{load_mesh, notch_square, save_mesh, unit_square_grid, write_vtk_file, MeshFormat};
use norm_core::operator::{build_model, load_checkpoint, save_checkpoint, Activation, ModelSpec, NormModel, Wiring};
use norm_core::spectral::{lbo_basis_with, read_basis_file, write_basis_file, EigenSolver, LboOptions};
use norm_core::training::{
    evaluate, gradcheck, sweep, train, write_sweep_csv, LrSchedule, NormalizationMode, SweepConfig, SweepKind,
    TrainConfig,
};
use norm_core::verify::{run_suite, Suite};
use norm_core::{BasisKind, Field, Mesh, SpectralBasis};

use crate::report::{CommandReport, Status};
use crate::{
    ActivationArg, Command, DataCmd, EvalArgs, ExportArgs, GenCmd, GradcheckArgs, LboCmd, MeshCmd, MeshFormatArg,
    ModelArgs, OptimArgs, SolverArg, SplitArg, SweepArgs, SweepKindArg, TrainArgs, VerifyArgs,
};

/// Steps above this are reported without a pass/fail verdict.
const GRADCHECK_JUDGED_STEP: f64 = 1e-4;

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CmdResult = Result<CommandReport, CliError>;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Mesh(m) => mesh(m),
        Command::Lbo(LboCmd::Compute { mesh, format, modes, solver, out }) => lbo(&mesh, format, modes, solver, &out),
        Command::Data(DataCmd::Gen(g)) => data_gen(g),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::ExportVtk(a) => export_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn read_mesh(path: &Path, format: Option<MeshFormatArg>) -> anyhow::Result<Mesh> {
    let format = match format {
        Some(MeshFormatArg::Off) => MeshFormat::Off,
        Some(MeshFormatArg::Obj) => MeshFormat::Obj,
        Some(MeshFormatArg::Mshjson) => MeshFormat::MshJson,
        None => MeshFormat::from_path(path)
            .ok_or_else(|| anyhow!("cannot tell the format of {}; pass --format", path.display()))?,
    };
    Ok(load_mesh(path, format)?)
}

fn mesh_summary(r: &mut CommandReport, mesh: &Mesh) {
    let kind = format!("{:?}", mesh.kind()).to_lowercase();
    r.line(format!("vertices   {}", mesh.n_vertices()));
    r.line(format!("cells      {} ({kind})", mesh.n_cells()));
    r.line(format!("dimension  {}", mesh.dim()));
    r.line(format!("measure    {:.12}", mesh.total_measure()));
    r.line(format!("boundary   {} vertices", mesh.boundary_vertices().len()));
    r.line(format!("domain id  {}", mesh.domain_id()));
    r.metrics = Some(json!({
        "vertices": mesh.n_vertices(),
        "cells": mesh.n_cells(),
        "cell_kind": kind,
        "dim": mesh.dim(),
        "measure": mesh.total_measure(),
        "boundary_vertices": mesh.boundary_vertices().len(),
        "domain_id": mesh.domain_id().to_hex(),
    }));
}

fn mesh(cmd: MeshCmd) -> CmdResult {
    let (name, mesh, out) = match cmd {
        MeshCmd::Grid { n, out } => ("mesh grid", unit_square_grid(n)?, out),
        MeshCmd::Notch { n, out } => ("mesh notch", notch_square(n)?, out),
        MeshCmd::Info { mesh, format } => {
            let m = read_mesh(&mesh, format)?;
            let mut r = CommandReport::new("mesh info");
            mesh_summary(&mut r, &m);
            return Ok(r);
        }
    };
    let mut r = CommandReport::new(name);
    let out = out.unwrap_or_else(|| PathBuf::from("mesh.json"));
    save_mesh(&mesh, &out)?;
    mesh_summary(&mut r, &mesh);
    r.output(&out);
    Ok(r)
}

fn lbo(path: &Path, format: Option<MeshFormatArg>, modes: usize, solver: SolverArg, out: &Path) -> CmdResult {
    let mesh = read_mesh(path, format)?;
    let s = norm_core::mesh::cotangent_stiffness(&mesh)?;
    let m = norm_core::mesh::lumped_mass(&mesh)?;
    let opts = LboOptions {
        solver: match solver {
            SolverArg::Auto => EigenSolver::Auto,
            SolverArg::Dense => EigenSolver::Dense,
            SolverArg::Lanczos => EigenSolver::Lanczos,
        },
        ..LboOptions::default()
    };
    let basis = lbo_basis_with(&s, &m, modes, &opts)?.with_source_id(mesh.domain_id());
    write_basis_file(&basis, out)?;
    let mut r = CommandReport::new("lbo compute");
    let head: Vec<String> = basis.values().iter().take(8).map(|v| format!("{v:.6}")).collect();
    r.line(format!("{} modes on {} nodes", basis.d_m(), basis.n_x()));
    r.line(format!("smallest eigenvalues: {}", head.join(" ")));
    r.metrics = Some(json!({ "modes": basis.d_m(), "n_x": basis.n_x(), "eigenvalues": basis.values() }));
    r.output(out);
    Ok(r)
}

fn dataset_summary(r: &mut CommandReport, d: &Dataset) {
    r.line(format!(
        "{} samples ({} train, {} test), input {}x{}, output {}x{}",
        d.len(),
        d.train.len(),
        d.test.len(),
        d.inputs[0].n_nodes(),
        d.inputs[0].channels(),
        d.outputs[0].n_nodes(),
        d.outputs[0].channels()
    ));
    r.metrics = Some(json!({
        "samples": d.len(),
        "train": d.train.len(),
        "test": d.test.len(),
        "provenance": d.provenance,
    }));
}

fn data_gen(cmd: GenCmd) -> CmdResult {
    let (name, data, out) = match cmd {
        GenCmd::Darcy { mesh, n, seed, grf_modes, amplitude, source, out } => {
            let m = read_mesh(&mesh, None)?;
            let modes = grf_modes.min(m.n_vertices());
            let basis = norm_core::spectral::lbo_basis_for_mesh(&m, modes)?;
            let bc = DirichletBc::outer_sine(&m, amplitude)?;
            let opts = DarcyOptions { source, ..DarcyOptions::default() };
            ("data gen darcy", make_darcy_dataset(&m, &basis, n, seed, &bc, &opts)?, out)
        }
        GenCmd::Heat { mesh, n, t, seed, out } => {
            let m = read_mesh(&mesh, None)?;
            ("data gen heat", make_heat_dataset(&m, n, t, seed)?, out)
        }
    };
    write_dataset(&data, &out)?;
    let mut r = CommandReport::new(name);
    dataset_summary(&mut r, &data);
    r.output(&out);
    Ok(r)
}

fn activation(a: ActivationArg) -> Activation {
    match a {
        ActivationArg::Gelu => Activation::Gelu,
        ActivationArg::Relu => Activation::Relu,
        ActivationArg::Identity => Activation::Identity,
    }
}

fn model_spec(args: &ModelArgs, data: &Dataset, seed: u64, basis_in: &SpectralBasis, cross: bool) -> ModelSpec {
    let mut spec = ModelSpec::new(data.inputs[0].channels(), data.outputs[0].channels());
    spec.width = args.width;
    spec.layers = args.layers;
    spec.modes = args.modes;
    spec.time_modes = args.time_modes;
    spec.activation = activation(args.activation);
    spec.p_hidden = args.p_hidden;
    spec.q_hidden = (args.q_hidden > 0).then_some(args.q_hidden);
    spec.seed = seed;
    let switch_at = args.switch_at.unwrap_or(args.layers / 2);
    spec.wiring = if basis_in.kind() == BasisKind::Fourier {
        Wiring::TemporalToManifold { switch_at }
    } else if cross {
        Wiring::CrossManifold { switch_at }
    } else {
        Wiring::SameManifold
    };
    spec
}

fn train_config(o: &OptimArgs) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch,
        learning_rate: o.lr,
        lr_schedule: if o.halve_every == 0 {
            LrSchedule::Constant
        } else {
            LrSchedule::StepHalving { every: o.halve_every }
        },
        seed: o.seed,
        normalization: if o.no_normalize { NormalizationMode::None } else { NormalizationMode::GlobalPerChannel },
        weight_decay: o.weight_decay,
        eval_every: o.eval_every,
    }
}

fn build(
    args: &ModelArgs,
    data: &Dataset,
    seed: u64,
    basis_in: &Path,
    basis_out: Option<&PathBuf>,
) -> anyhow::Result<NormModel> {
    let bi = Arc::new(read_basis_file(basis_in)?);
    let bo = match basis_out {
        Some(p) => Arc::new(read_basis_file(p)?),
        None => bi.clone(),
    };
    let cross = basis_out.is_some() && bo.source_id() != bi.source_id();
    let spec = model_spec(args, data, seed, &bi, cross);
    let bo = if cross || bi.kind() == BasisKind::Fourier { bo } else { bi.clone() };
    Ok(build_model(&spec, bi, bo)?)
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let data = read_dataset(&a.data)?;
    let cfg = train_config(&a.optim);
    let mut model = build(&a.model, &data, a.optim.seed, &a.basis_in, a.basis_out.as_ref())?;
    let history = train(&mut model, &data, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    let hist_path = a.out.join("history.json");
    let records: Vec<_> = history
        .epochs
        .iter()
        .map(|e| json!({ "epoch": e.epoch, "train_loss": e.train_loss, "test_rel_l2": e.test_rel_l2 }))
        .collect();
    std::fs::write(&hist_path, serde_json::to_string_pretty(&records)?)
        .with_context(|| format!("writing {}", hist_path.display()))?;
    let mut r = CommandReport::new("train");
    let last = history.epochs.last().expect("at least one epoch");
    r.line(format!("{} parameters, {} epochs", model.param_count(), cfg.epochs));
    r.line(format!("final train loss {:.4e}", last.train_loss));
    if let Some(t) = history.final_test_rel_l2() {
        r.line(format!("final test rel_l2 {t:.4e}"));
    }
    r.metrics = Some(json!({
        "param_count": model.param_count(),
        "train_loss": last.train_loss,
        "test_rel_l2": history.final_test_rel_l2(),
        "train_seconds": last.seconds,
    }));
    r.output(&a.out.join("model.json"));
    r.output(&a.out.join("params.bin"));
    for i in 0..model.bases().len() {
        r.output(&a.out.join(format!("basis_{i}.nsb")));
    }
    r.output(&hist_path);
    Ok(r)
}

fn split(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let model = load_checkpoint(&a.ckpt)?;
    let data = read_dataset(&a.data)?;
    let m = evaluate(&model, &data, split(a.split))?;
    let payload = json!({
        "rel_l2": m.rel_l2,
        "rel_l2_std": m.rel_l2_std,
        "mme": m.mme,
        "per_sample": {
            "index": data.indices(split(a.split)),
            "rel_l2": m.per_sample_rel_l2,
            "max_error": m.per_sample_max_error,
        },
        "config": {
            "split": format!("{:?}", a.split).to_lowercase(),
            "param_count": model.param_count(),
            "architecture": model.architecture(),
        },
    });
    let mut r = CommandReport::new("eval");
    r.line(format!("rel_l2 {:.4e} (std {:.2e})  mme {:.4e}", m.rel_l2, m.rel_l2_std, m.mme));
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&payload)?)
            .with_context(|| format!("writing {}", p.display()))?;
        r.output(p);
    }
    r.metrics = Some(json!({ "rel_l2": m.rel_l2, "rel_l2_std": m.rel_l2_std, "mme": m.mme }));
    Ok(r)
}

fn sweep_cmd(a: SweepArgs) -> CmdResult {
    if a.grid.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    let data = read_dataset(&a.data)?;
    let lbo = read_basis_file(&a.basis)?;
    let cfg = SweepConfig {
        kind: match a.kind {
            SweepKindArg::Modes => SweepKind::Modes,
            SweepKindArg::DataSize => SweepKind::DataSize,
        },
        grid: a.grid.clone(),
        model: model_spec(&a.model, &data, a.optim.seed, &lbo, false),
        train: train_config(&a.optim),
        compare_pod: a.compare_pod,
    };
    let rows = sweep(&cfg, &data, &lbo)?;
    write_sweep_csv(&rows, &a.out)?;
    let mut r = CommandReport::new("sweep");
    r.line(format!("{:<6} {:>8} {:>12} {:>12} {:>9}", "basis", "value", "rel_l2", "mme", "seconds"));
    for row in &rows {
        r.line(format!(
            "{:<6} {:>8} {:>12.4e} {:>12.4e} {:>9.1}",
            row.basis, row.value, row.rel_l2, row.mme, row.seconds
        ));
    }
    r.metrics = Some(serde_json::to_value(&rows)?);
    r.output(&a.out);
    Ok(r)
}

fn verify_cmd(a: VerifyArgs) -> CmdResult {
    let suite: Suite = a.suite.parse().map_err(|e: norm_core::NormError| CliError::Usage(e.to_string()))?;
    let rep = run_suite(suite)?;
    let mut r = CommandReport::new("verify");
    for c in &rep.checks {
        r.line(format!(
            "[{}] {:<14} {:<40} {:.3e} (tol {:.2e}, margin {:.3e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.tolerance,
            c.margin()
        ));
    }
    if let Some(w) = rep.worst() {
        r.line(format!("worst: {} / {} at {:.3e} of tolerance {:.1e}", w.suite, w.name, w.value, w.tolerance));
    }
    if !rep.pass() {
        r.status = Status::Failed;
    }
    r.metrics = Some(json!({ "suite": suite.name(), "pass": rep.pass(), "checks": rep.checks }));
    Ok(r)
}

/// Loads a nodal field from a dataset sample or a JSON field file.
fn read_fields(path: &Path, sample: usize, domain: norm_core::DomainId) -> anyhow::Result<FieldSource> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(DATASET_MAGIC) {
        let data = read_dataset(path)?;
        if sample >= data.len() {
            bail!("sample {sample} out of range for {} samples", data.len());
        }
        return Ok(FieldSource::Sample(Box::new(data), sample));
    }
    #[derive(serde::Deserialize)]
    struct RawField {
        channels: usize,
        values: Vec<f64>,
    }
    let raw: RawField = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    if raw.channels == 0 || raw.values.len() % raw.channels != 0 {
        bail!("{} values do not split into {} channels", raw.values.len(), raw.channels);
    }
    Ok(FieldSource::Raw(Field::new(raw.values.len() / raw.channels, raw.channels, raw.values, domain)?))
}

enum FieldSource {
    Sample(Box<Dataset>, usize),
    Raw(Field),
}

fn export_cmd(a: ExportArgs) -> CmdResult {
    let mesh = read_mesh(&a.mesh, a.format)?;
    let mut named: Vec<(String, Field)> = Vec::new();
    match read_fields(&a.field, a.sample, mesh.domain_id())? {
        FieldSource::Raw(f) => named.push(("field".into(), f)),
        FieldSource::Sample(data, i) => {
            let (input, output) = (&data.inputs[i], &data.outputs[i]);
            if input.n_nodes() == mesh.n_vertices() {
                named.push(("input".into(), input.clone()));
            }
            if output.n_nodes() == mesh.n_vertices() {
                named.push(("output".into(), output.clone()));
            }
            if named.is_empty() {
                return Err(CliError::Runtime(
                    norm_core::NormError::DimensionMismatch(format!(
                        "sample {i} has {} input and {} output nodes, mesh has {}",
                        input.n_nodes(),
                        output.n_nodes(),
                        mesh.n_vertices()
                    ))
                    .into(),
                ));
            }
            if let Some(ck) = &a.ckpt {
                let model = load_checkpoint(ck)?;
                let pred = model.forward(input)?;
                if pred.n_nodes() == mesh.n_vertices() {
                    let err = pred.axpy(-1.0, output)?;
                    named.push(("prediction".into(), pred));
                    named.push(("error".into(), err));
                }
            }
        }
    }
    let refs: Vec<(&str, &Field)> = named.iter().map(|(n, f)| (n.as_str(), f)).collect();
    write_vtk_file(&mesh, &refs, &a.out)?;
    let mut r = CommandReport::new("export-vtk");
    let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    r.line(format!("{} points, {} cells, arrays: {}", mesh.n_vertices(), mesh.n_cells(), names.join(", ")));
    r.output(&a.out);
    Ok(r)
}

fn gradcheck_cmd(a: GradcheckArgs) -> CmdResult {
    let data = read_dataset(&a.data)?;
    let model = match (&a.ckpt, &a.basis_in) {
        (Some(ck), _) => load_checkpoint(ck)?,
        (None, Some(bi)) => build(&a.model, &data, a.seed, bi, a.basis_out.as_ref())?,
        (None, None) => return Err(CliError::Usage("gradcheck needs --ckpt or --basis-in".into())),
    };
    if a.sample >= data.len() {
        return Err(CliError::Usage(format!("sample {} out of range for {} samples", a.sample, data.len())));
    }
    let rep = gradcheck(&model, &data.inputs[a.sample], &data.outputs[a.sample], a.params, a.step, a.seed)?;
    let mut r = CommandReport::new("gradcheck");
    r.line(format!("{:>8} {:<18} {:>14} {:>14} {:>10}", "index", "group", "analytic", "numeric", "rel err"));
    for e in &rep.entries {
        r.line(format!(
            "{:>8} {:<18} {:>14.6e} {:>14.6e} {:>10.2e}",
            e.index, e.group, e.analytic, e.numeric, e.rel_error
        ));
    }
    let judged = a.step <= GRADCHECK_JUDGED_STEP;
    if judged {
        let pass = rep.max_rel_error <= a.tol;
        r.line(format!(
            "max relative error {:.3e} (tol {:.1e}): {}",
            rep.max_rel_error,
            a.tol,
            if pass { "PASS" } else { "FAIL" }
        ));
        if !pass {
            r.status = Status::Failed;
        }
    } else {
        r.line(format!("max relative error {:.3e} (step {:.1e}, diagnostic only)", rep.max_rel_error, a.step));
    }
    r.metrics = Some(json!({
        "max_rel_error": rep.max_rel_error,
        "step": rep.step,
        "judged": judged,
        "tolerance": a.tol,
        "entries": rep.entries,
    }));
    Ok(r)
}
