//! Experiment steps and the commands built from them.

use std::path::{Path, PathBuf};

use mampc_core::exec::{self, Execution};
use mampc_core::mampc::{ClosedLoopRun, ControllerKind};
use mampc_core::plants::{prbs, PrbsConfig};
use mampc_core::sysid::{detrend, subspace_identify, Identification};
use mampc_core::{closed_loop, ClosedLoopLog, ClosedLoopSetup, PlantModel, QuadrupleTank, Sofc};
use nalgebra::{DMatrix, DVector};

use crate::artifacts::{read_log, upsert_metrics, write_log, Dataset, MetricsRow, ModelFile};
use crate::config::{ExperimentConfig, PlantKind};
use crate::plots::{inputs_svg, outputs_svg};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOG_FILE: &str = "log.csv";

pub fn build_plant(cfg: &ExperimentConfig) -> Result<Box<dyn PlantModel>, CliError> {
    let plant: Box<dyn PlantModel> = match cfg.plant {
        PlantKind::Tank => Box::new(QuadrupleTank::new(cfg.tank.clone(), cfg.plant_step).map_err(config_err)?),
        PlantKind::Sofc => Box::new(Sofc::new(cfg.sofc.clone(), cfg.plant_step).map_err(config_err)?),
    };
    Ok(plant)
}

fn config_err(e: mampc_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Nominal plant state, input and output.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
}

pub fn operating_point(cfg: &ExperimentConfig, plant: &dyn PlantModel) -> Result<OperatingPoint, CliError> {
    let (x, u) = match cfg.plant {
        PlantKind::Tank => {
            let u = DVector::from_column_slice(&cfg.tank_nominal_input);
            let x = DVector::from_column_slice(&cfg.tank.steady_state_levels(cfg.tank_nominal_input));
            (x, u)
        }
        PlantKind::Sofc => {
            let sofc = Sofc::new(cfg.sofc.clone(), cfg.plant_step).map_err(config_err)?;
            let u = sofc.nominal_input();
            let x = sofc.steady_state(&u).map_err(CliError::numeric("SOFC operating point"))?;
            (x, u)
        }
    };
    let y = plant.output(&x, &u).map_err(CliError::numeric("nominal output"))?;
    Ok(OperatingPoint { x, u, y })
}

/// PRBS experiment from the nominal operating point.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let plant = build_plant(cfg)?;
    let op = operating_point(cfg, plant.as_ref())?;
    let n = cfg.ident_samples;
    let signals = (0..cfg.inputs())
        .map(|i| {
            let p = PrbsConfig {
                order: cfg.prbs_order,
                seed: cfg.prbs_seed(i),
                hold: cfg.prbs_hold,
                low: cfg.prbs_low[i],
                high: cfg.prbs_high[i],
            };
            prbs(&p, n).map_err(config_err)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut x = op.x.clone();
    for k in 0..cfg.ident_settle {
        x = plant
            .advance(&x, &op.u, cfg.sample_time)
            .map_err(|e| CliError::numeric(format!("settling sample {k}"))(e))?;
    }
    let u = DMatrix::from_fn(n, cfg.inputs(), |k, i| signals[i][k]);
    let mut y = DMatrix::zeros(n, cfg.outputs());
    for k in 0..n {
        let uk = u.row(k).transpose();
        let yk = plant.output(&x, &uk).map_err(CliError::numeric(format!("dataset sample {k}")))?;
        y.set_row(k, &yk.transpose());
        x = plant.advance(&x, &uk, cfg.sample_time).map_err(CliError::numeric(format!("dataset sample {k}")))?;
    }
    Ok(Dataset { t: (0..n).map(|k| k as f64 * cfg.sample_time).collect(), u, y })
}

pub fn identify(cfg: &ExperimentConfig, data: &Dataset) -> Result<(ModelFile, Identification), CliError> {
    let dt = data.dt()?;
    let io = detrend(&data.u, &data.y, dt).map_err(CliError::numeric("dataset"))?;
    let order = (cfg.ident_order > 0).then_some(cfg.ident_order);
    let rows = (cfg.ident_block_rows > 0).then_some(cfg.ident_block_rows);
    let id = subspace_identify(&io, order, rows).map_err(CliError::numeric("subspace identification"))?;
    let file = ModelFile { model: id.model.clone(), u_offset: id.u_offset.clone(), y_offset: id.y_offset.clone() };
    Ok((file, id))
}

/// Piecewise-constant reference, one row per step, in plant units.
pub fn reference(cfg: &ExperimentConfig, y_nominal: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(cfg.steps, cfg.outputs(), |k, j| {
        let seg = cfg.reference_starts.iter().rposition(|&s| s <= k).unwrap_or(0);
        y_nominal[j] + cfg.reference_offsets[seg][j]
    })
}

/// One closed-loop variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunVariant {
    pub controller: ControllerKind,
    /// Overrides `horizon.n_s` for MAMPC.
    pub n_s: Option<usize>,
}

impl RunVariant {
    pub fn mpc() -> Self {
        RunVariant { controller: ControllerKind::Mpc, n_s: None }
    }

    pub fn mampc(n_s: usize) -> Self {
        RunVariant { controller: ControllerKind::Mampc, n_s: Some(n_s) }
    }

    pub fn label(&self, cfg: &ExperimentConfig) -> String {
        match self.controller {
            ControllerKind::Mpc => "mpc".into(),
            ControllerKind::Mampc => format!("mampc_ns{}", self.n_s.unwrap_or(cfg.horizon.n_s)),
        }
    }

    pub fn resolve(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = cfg.clone();
        if let Some(n_s) = self.n_s {
            cfg.horizon.n_s = n_s;
            cfg.bootstrap = cfg.bootstrap.max(n_s);
        }
        cfg
    }
}

pub fn run(cfg: &ExperimentConfig, model: &ModelFile, variant: RunVariant) -> Result<ClosedLoopRun, CliError> {
    let label = variant.label(cfg);
    let cfg = variant.resolve(cfg);
    cfg.validate()?;
    let plant = build_plant(&cfg)?;
    let op = operating_point(&cfg, plant.as_ref())?;
    let mut header = vec![("run.label".to_string(), label)];
    header.extend(cfg.header());
    let setup = ClosedLoopSetup {
        plant: plant.as_ref(),
        model: &model.model,
        cfg: cfg.horizon.clone(),
        controller: variant.controller,
        reference: reference(&cfg, &op.y),
        steps: cfg.steps,
        bootstrap: cfg.bootstrap,
        sample_time: cfg.sample_time,
        x0: op.x,
        u_initial: op.u,
        u_offset: model.u_offset.clone(),
        y_offset: model.y_offset.clone(),
        header,
    };
    closed_loop(&setup).map_err(|e| match e {
        e if e.is_numeric() => CliError::Numeric { context: "closed loop".into(), source: e },
        e => CliError::Config(format!("closed loop: {e}")),
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    write_text(&dir.join(CONFIG_FILE), &cfg.to_flat())
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    create_dir(out)?;
    write_config(cfg, out)?;
    let data = simulate(cfg)?;
    let path = out.join(DATASET_FILE);
    data.write(&path)?;
    Ok(path)
}

pub fn cmd_identify(cfg: &ExperimentConfig, out: &Path) -> Result<Identification, CliError> {
    let path = out.join(DATASET_FILE);
    if !path.exists() {
        return Err(CliError::Artifact(format!("no dataset at {}; run `simulate` first", path.display())));
    }
    let data = Dataset::read(&path)?;
    let (file, id) = identify(cfg, &data)?;
    write_config(cfg, out)?;
    file.write(&out.join(MODEL_FILE))?;
    Ok(id)
}

/// Summary of one finished run.
#[derive(Debug)]
pub struct RunOutcome {
    pub label: String,
    pub dir: PathBuf,
    pub metrics: MetricsRow,
    pub run: ClosedLoopRun,
}

/// Run one controller against `out/model.csv`, writing its log and plots
/// to `out/<label>/` and its metrics row into `out/metrics.csv`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, variant: RunVariant) -> Result<RunOutcome, CliError> {
    let outcome = run_to_dir(cfg, out, variant)?;
    upsert_metrics(&out.join(METRICS_FILE), std::slice::from_ref(&outcome.metrics))?;
    Ok(outcome)
}

fn load_model(out: &Path) -> Result<ModelFile, CliError> {
    let path = out.join(MODEL_FILE);
    if !path.exists() {
        return Err(CliError::Artifact(format!("no model at {}; run `identify` first", path.display())));
    }
    ModelFile::read(&path)
}

fn run_to_dir(cfg: &ExperimentConfig, out: &Path, variant: RunVariant) -> Result<RunOutcome, CliError> {
    let model = load_model(out)?;
    let label = variant.label(cfg);
    let dir = out.join(&label);
    create_dir(&dir)?;
    write_config(&variant.resolve(cfg), &dir)?;
    let mut run = run(cfg, &model, variant)?;
    write_log(&dir.join(LOG_FILE), &run.log)?;
    if !run.log.is_empty() {
        write_text(&dir.join("inputs.svg"), &inputs_svg(&run.log, &format!("{label}: inputs")))?;
        write_text(&dir.join("outputs.svg"), &outputs_svg(&run.log, &format!("{label}: outputs and reference")))?;
    }
    if let Some(source) = run.failure.take() {
        return Err(CliError::Numeric {
            context: format!("{label} stopped after {} steps (partial log in {})", run.log.len(), dir.display()),
            source,
        });
    }
    let metrics = MetricsRow::from_log(&label, &run.log, cfg.threshold, cfg.drop)?;
    Ok(RunOutcome { label, dir, metrics, run })
}

/// Metrics rows for existing logs. Labels come from the log header, or the
/// parent directory name when absent.
pub fn cmd_compare(logs: &[PathBuf], threshold: f64, drop: usize, out: Option<&Path>) -> Result<Vec<MetricsRow>, CliError> {
    let rows = logs
        .iter()
        .map(|p| {
            let log: ClosedLoopLog = read_log(p)?;
            let label = log.header_value("run.label").map(String::from).unwrap_or_else(|| {
                p.parent().and_then(|d| d.file_name()).map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into())
            });
            MetricsRow::from_log(&label, &log, threshold, drop)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = out {
        create_dir(out)?;
        upsert_metrics(&out.join(METRICS_FILE), &rows)?;
    }
    Ok(rows)
}

/// Simulate and identify when the artifacts are missing, then run MPC and
/// MAMPC at `n_s = 1` and `3` side by side.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, execution: Execution) -> Result<Vec<RunOutcome>, CliError> {
    if !out.join(DATASET_FILE).exists() {
        cmd_simulate(cfg, out)?;
    }
    if !out.join(MODEL_FILE).exists() {
        cmd_identify(cfg, out)?;
    }
    write_config(cfg, out)?;
    let variants = [RunVariant::mpc(), RunVariant::mampc(1), RunVariant::mampc(3)];
    let outcomes = exec::map(execution, &variants, |variant| run_to_dir(cfg, out, *variant))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<MetricsRow> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    upsert_metrics(&out.join(METRICS_FILE), &rows)?;
    Ok(outcomes)
}

/// Plain-text table of metrics rows.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let dens = |d: &[f64]| d.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ");
        out.push_str(&format!(
            "{:<12} density [{}] error {:.4e} | drop {}: density [{}] error {:.4e}\n",
            r.label,
            dens(&r.density),
            r.error,
            r.drop,
            dens(&r.density_dropped),
            r.error_dropped
        ));
    }
    out
}
