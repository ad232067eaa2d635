use std::path::{Path, PathBuf};

use clap::Args;
use gfgl::active::segment_start;
use gfgl::evaluate::{evaluate_blocks, theory_constants};
use gfgl::path::{default_grid, lambda2_max, run_path, PathOptions, PathPoint};
use gfgl::segmentation::block_precisions;
use gfgl::simulate::{generate_truth, sample_timeseries, GraphModel, SimSpec, StructureChange};
use gfgl::solver::{admm_solve, warm_start_solve, SolveResult, SolverConfig};
use gfgl::{local_covariances, GroundTruth, LocalCovarianceSeq, RegularizationConfig, Segmentation};
use serde::{Deserialize, Serialize};

use crate::io::{
    matrix_of, read_json, read_timeseries, rows_of, write_json, write_timeseries, CliError, CliResult,
    FitConfigEcho, FitDocument, History, Residuals, TruthDocument,
};

/// Reduced fits allowed when `--segment-start` builds the initial state.
const START_ROUNDS: usize = 50;

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol_primal: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol_dual: f64,
    /// ADMM penalty weight, used for all three constraint families.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

impl SolverArgs {
    fn config(&self, lambda1: f64, lambda2: f64, parallel: bool) -> CliResult<SolverConfig> {
        check_lambda("lambda1", lambda1)?;
        check_lambda("lambda2", lambda2)?;
        let reg = RegularizationConfig::new(lambda1, lambda2)?;
        let mut cfg = SolverConfig::new(reg).with_max_iter(self.max_iter).with_gamma(self.gamma).with_parallel(parallel);
        cfg.tol_primal = self.tol_primal;
        cfg.tol_dual = self.tol_dual;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_lambda(name: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(CliError::Input(format!("{name} must be positive (got {v})")));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file, rows = time points, columns = variables.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lambda1: f64,
    #[arg(long)]
    pub lambda2: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Start from an active-set fit on a block segmentation instead of the
    /// identity.
    #[arg(long)]
    pub segment_start: bool,
    /// Record residuals and objective at every iteration.
    #[arg(long)]
    pub history: bool,
    /// JSON output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn fit_document(res: &SolveResult, cfg: &SolverConfig, segment_start: bool) -> CliResult<FitDocument> {
    let blocks = block_precisions(&res.precisions, &res.segmentation)?;
    let history = match (&res.residual_history, &res.objective_history) {
        (Some(r), Some(o)) => Some(History { residuals: r.clone(), objective: o.clone() }),
        _ => None,
    };
    Ok(FitDocument {
        t_len: res.precisions.t_len(),
        p: res.precisions.dim(),
        changepoints: res.segmentation.changepoints().to_vec(),
        block_precisions: blocks.iter().map(rows_of).collect(),
        jump_norms: res.jump_norms.clone(),
        objective: res.final_objective,
        iterations: res.iterations,
        converged: res.converged,
        residuals: Residuals { primal: res.eps_primal, dual: res.eps_dual },
        config: FitConfigEcho {
            lambda1: cfg.reg.lambda1,
            lambda2: cfg.reg.lambda2,
            gamma: cfg.gamma_v1,
            tol_primal: cfg.tol_primal,
            tol_dual: cfg.tol_dual,
            max_iter: cfg.max_iter,
            segment_start,
        },
        history,
    })
}

fn covariances(input: &Path) -> CliResult<LocalCovarianceSeq> {
    Ok(local_covariances(&read_timeseries(input)?))
}

pub fn fit(args: &FitArgs, parallel: bool) -> CliResult<()> {
    let cfg = args.solver.config(args.lambda1, args.lambda2, parallel)?.with_history(args.history);
    let s = covariances(&args.input)?;
    let res = if args.segment_start {
        let start = segment_start(&s, &cfg, &Segmentation::single_block(s.t_len()), START_ROUNDS)?;
        warm_start_solve(&s, &cfg, &start.state)?
    } else {
        admm_solve(&s, &cfg)?
    };
    write_json(args.output.as_deref(), &fit_document(&res, &cfg, args.segment_start)?)
}

/// `name` or `name:value`, e.g. `erdos_renyi_edges:10`.
fn split_tagged(s: &str) -> (&str, Option<&str>) {
    match s.split_once(':') {
        Some((a, b)) => (a.trim(), Some(b.trim())),
        None => (s.trim(), None),
    }
}

fn parse_graph(s: &str) -> Result<GraphModel, String> {
    let (name, value) = split_tagged(s);
    let num = || value.ok_or(format!("graph '{name}' needs a value, e.g. {name}:10"));
    match name {
        "erdos_renyi_edges" => num()?.parse().map(GraphModel::ErdosRenyiEdges).map_err(|e| format!("{e}")),
        "erdos_renyi_prob" => num()?.parse().map(GraphModel::ErdosRenyiProb).map_err(|e| format!("{e}")),
        "chain" => Ok(GraphModel::Chain),
        "identity" => Ok(GraphModel::Identity),
        _ => Err(format!("unknown graph '{s}' (erdos_renyi_edges:M, erdos_renyi_prob:Q, chain, identity)")),
    }
}

fn parse_structure(s: &str) -> Result<StructureChange, String> {
    match split_tagged(s) {
        ("redraw_all", None) => Ok(StructureChange::RedrawAll),
        ("perturb_subset", Some(m)) => m.parse().map(StructureChange::PerturbSubset).map_err(|e| format!("{e}")),
        _ => Err(format!("unknown structure change '{s}' (redraw_all, perturb_subset:M)")),
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

/// SimSpec fields as they may appear in a config file; all optional so that
/// flags can fill or override them.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    p: Option<usize>,
    t_len: Option<usize>,
    changepoints: Option<Vec<usize>>,
    graph: Option<GraphModel>,
    base_diagonal: Option<f64>,
    weight_range: Option<(f64, f64)>,
    random_sign: Option<bool>,
    structure_change: Option<StructureChange>,
    min_jump: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with SimSpec keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub t_len: Option<usize>,
    /// Comma separated, 1-based.
    #[arg(long, value_delimiter = ',')]
    pub changepoints: Option<Vec<usize>>,
    /// erdos_renyi_edges:M, erdos_renyi_prob:Q, chain or identity.
    #[arg(long, value_parser = parse_graph)]
    pub graph: Option<GraphModel>,
    #[arg(long)]
    pub base_diagonal: Option<f64>,
    /// Off-diagonal weight magnitudes as LO,HI.
    #[arg(long, value_parser = parse_pair)]
    pub weight_range: Option<(f64, f64)>,
    #[arg(long)]
    pub random_sign: Option<bool>,
    /// redraw_all or perturb_subset:M.
    #[arg(long, value_parser = parse_structure)]
    pub structure_change: Option<StructureChange>,
    /// Smallest Frobenius jump between consecutive block covariances.
    #[arg(long)]
    pub min_jump: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    /// CSV file for the sampled series.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file for the ground truth.
    #[arg(long)]
    pub truth: PathBuf,
}

impl SimulateArgs {
    fn spec(&self) -> CliResult<SimSpec> {
        let file: SimFile = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            }
            None => SimFile::default(),
        };
        let need = |v: Option<usize>, name: &str| v.ok_or(CliError::Input(format!("{name} is required (flag or config)")));
        let p = need(self.p.or(file.p), "p")?;
        let t_len = need(self.t_len.or(file.t_len), "t_len")?;
        let changepoints = self.changepoints.clone().or(file.changepoints).unwrap_or_default();
        let graph = self.graph.or(file.graph).ok_or(CliError::Input("graph is required (flag or config)".into()))?;
        let mut spec = SimSpec::new(p, t_len, changepoints, graph, self.seed);
        if let Some(v) = self.base_diagonal.or(file.base_diagonal) {
            spec.base_diagonal = v;
        }
        if let Some(v) = self.weight_range.or(file.weight_range) {
            spec.weight_range = v;
        }
        if let Some(v) = self.random_sign.or(file.random_sign) {
            spec.random_sign = v;
        }
        if let Some(v) = self.structure_change.or(file.structure_change) {
            spec.structure_change = v;
        }
        spec.min_jump = self.min_jump.or(file.min_jump);
        spec.validate()?;
        Ok(spec)
    }
}

/// Seed of the sampling stream, kept apart from the graph stream.
pub fn sample_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let spec = args.spec()?;
    let truth = generate_truth(&spec)?;
    let x = sample_timeseries(&truth, spec.t_len, sample_seed(spec.seed))?;
    let constants = theory_constants(&truth)?;
    let doc = TruthDocument {
        t_len: spec.t_len,
        p: spec.p,
        changepoints: truth.segmentation.changepoints().to_vec(),
        block_precisions: truth.block_precisions.iter().map(rows_of).collect(),
        block_covariances: truth.block_covariances.iter().map(rows_of).collect(),
        edge_sets: truth.edge_sets.clone(),
        eta_min: truth.eta_min(),
        phi_max: constants.phi_max,
        spec,
    };
    write_timeseries(&args.data, &x)?;
    write_json(Some(&args.truth), &doc)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output of `fit` (or `path --fit-output`).
    #[arg(long)]
    pub fit: PathBuf,
    /// Output of `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Changepoint error rate for the assumption ratios.
    #[arg(long)]
    pub delta_t: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn truth_of(doc: &TruthDocument) -> CliResult<GroundTruth> {
    let precisions = doc
        .block_precisions
        .iter()
        .enumerate()
        .map(|(k, m)| matrix_of(m, &format!("truth block {}", k + 1)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(GroundTruth::from_precisions(precisions, Segmentation::new(doc.changepoints.clone(), doc.t_len)?)?)
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let fit: FitDocument = read_json(&args.fit)?;
    let truth = truth_of(&read_json(&args.truth)?)?;
    let blocks = fit
        .block_precisions
        .iter()
        .enumerate()
        .map(|(k, m)| matrix_of(m, &format!("fitted block {}", k + 1)))
        .collect::<CliResult<Vec<_>>>()?;
    let seg = Segmentation::new(fit.changepoints.clone(), fit.t_len)?;
    let reg = RegularizationConfig::new(fit.config.lambda1, fit.config.lambda2)?;
    let report = evaluate_blocks(&blocks, &seg, &truth, Some(&reg), args.delta_t)?;
    write_json(args.output.as_deref(), &report)
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// One or more comma separated values; each gets its own λ2 sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda1: Vec<f64>,
    /// Explicit λ2 values, comma separated, solved in the given order.
    #[arg(long, value_delimiter = ',')]
    pub lambda2: Option<Vec<f64>>,
    /// Points of the default geometric grid below the constant-fit bound.
    #[arg(long, default_value_t = 40)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.9)]
    pub grid_ratio: f64,
    /// Report the largest λ2 giving this many changepoints.
    #[arg(long)]
    pub target_k: Option<usize>,
    /// Bisection steps when the grid steps over the target count.
    #[arg(long, default_value_t = 40)]
    pub refine_steps: usize,
    /// Keep sweeping after the target is found.
    #[arg(long)]
    pub full: bool,
    /// Solve every point from the identity instead of warm starting.
    #[arg(long)]
    pub cold: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write the target fit in the `fit` format.
    #[arg(long)]
    pub fit_output: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PathTarget {
    lambda1: f64,
    lambda2: f64,
    k_hat: usize,
    changepoints: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct PathDocument {
    lambda2_max: f64,
    target_k: Option<usize>,
    points: Vec<PathPoint>,
    target: Option<PathTarget>,
}

/// Sweeps and picks the target exactly as `gfgl path` does: per `λ1` a
/// warm-started λ2 sweep; the target is the largest `λ2` over all sweeps
/// with `K̂ = target_k`, ties going to the earlier `λ1`.
pub fn select_path(
    s: &LocalCovarianceSeq,
    base: &SolverConfig,
    lambda1: &[f64],
    grid: &[f64],
    opts: &PathOptions,
) -> CliResult<(Vec<PathPoint>, Option<(SolverConfig, SolveResult)>)> {
    let mut points = Vec::new();
    let mut best: Option<(SolverConfig, SolveResult)> = None;
    for &l1 in lambda1 {
        check_lambda("lambda1", l1)?;
        let mut cfg = base.clone();
        cfg.reg.lambda1 = l1;
        let out = run_path(s, &cfg, grid, opts)?;
        if let Some((idx, res)) = out.target {
            let l2 = out.points[idx].lambda2;
            if best.as_ref().is_none_or(|(c, _)| l2 > c.reg.lambda2) {
                cfg.reg.lambda2 = l2;
                best = Some((cfg, res));
            }
        }
        points.extend(out.points);
    }
    Ok((points, best))
}

pub fn path(args: &PathArgs, parallel: bool) -> CliResult<()> {
    let s = covariances(&args.input)?;
    let bound = lambda2_max(&s);
    let grid = match &args.lambda2 {
        Some(g) => {
            for &v in g {
                check_lambda("lambda2", v)?;
            }
            g.clone()
        }
        None => {
            if !(args.grid_ratio > 0.0 && args.grid_ratio < 1.0) {
                return Err(CliError::Input(format!("grid-ratio must be in (0, 1) (got {})", args.grid_ratio)));
            }
            default_grid(&s, args.grid_ratio, args.grid_points)
        }
    };
    if grid.is_empty() {
        return Err(CliError::Input("empty lambda2 grid".into()));
    }
    let base = args.solver.config(args.lambda1[0], grid[0], parallel)?;
    let opts = PathOptions {
        target_k: args.target_k,
        stop_at_target: !args.full,
        cold: args.cold,
        refine_steps: args.refine_steps,
    };
    let (points, best) = select_path(&s, &base, &args.lambda1, &grid, &opts)?;
    if let (Some(path), Some((cfg, res))) = (&args.fit_output, &best) {
        write_json(Some(path), &fit_document(res, cfg, !args.cold)?)?;
    }
    let target = best.map(|(cfg, res)| PathTarget {
        lambda1: cfg.reg.lambda1,
        lambda2: cfg.reg.lambda2,
        k_hat: res.segmentation.num_changepoints(),
        changepoints: res.segmentation.changepoints().to_vec(),
    });
    write_json(args.output.as_deref(), &PathDocument { lambda2_max: bound, target_k: args.target_k, points, target })
}
