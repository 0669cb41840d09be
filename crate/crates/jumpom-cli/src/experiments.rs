use std::fs::File;
use std::io::{BufReader, Write};

use jumpom::expr::ExpressionAst;
use jumpom::infinite::{discrete_om_action, DomOptions, InfiniteError};
use jumpom::levy_fpe::{solve_levy_fpe, FpeError, FpeOptions};
use jumpom::map_solver::{minimize_action, MapError, MapProblem, OptimizerOptions};
use jumpom::models::{
    validate_finite_model, validate_infinite_model, FiniteActivityModel, FiniteValidationOptions,
    InfiniteActivityModel, ValidationReport,
};
use jumpom::om::{classical_om_action, om_action, JumpQuadSpec, OmError, OmOptions, SmoothPath, Trajectory};
use jumpom::prob_flow::{
    simulate_flow_sde, simulate_jump_marginals, FlowDrift, FlowError, FlowQuadrature, FlowSamples,
    FlowSimOptions, FlowStart,
};
use jumpom::sde_sim::{par_paths, simulate_jump_diffusion_path, DiscretePath, SimError};
use jumpom::stats::compare_marginals;
use jumpom::tube::{om_ratio_experiment, write_ratio_csv, TubeError, TubeOptions};
use serde::Serialize;

use crate::config::{
    DomEvalExp, Experiment, FlowCompareExp, MapExp, Numerics, OmEvalExp, SimulateExp, SolveFpeExp,
    TubeRatioExp,
};
use crate::{CliError, Command, Model, RunContext, Summary};

/// Seed offset of the second, independent jump-diffusion run.
const FLOOR_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::InvalidInput(_) => CliError::validation("sde_sim", e.to_string()),
        _ => CliError::numerical("sde_sim", e.to_string()),
    }
}

fn fpe_err(e: FpeError) -> CliError {
    match e {
        FpeError::MassLoss { .. } | FpeError::Io(_) => CliError::numerical("levy_fpe", e.to_string()),
        _ => CliError::validation("levy_fpe", e.to_string()),
    }
}

fn flow_err(e: FlowError) -> CliError {
    match e {
        FlowError::Mismatch(_) | FlowError::InvalidInput(_) | FlowError::OutOfTime { .. } => {
            CliError::validation("prob_flow", e.to_string())
        }
        _ => CliError::numerical("prob_flow", e.to_string()),
    }
}

fn om_err(e: OmError) -> CliError {
    CliError::validation("om", e.to_string())
}

fn tube_err(e: TubeError) -> CliError {
    match e {
        TubeError::Sim(e) => sim_err(e),
        TubeError::Om(e) => om_err(e),
        _ => CliError::validation("tube", e.to_string()),
    }
}

fn map_err(e: MapError) -> CliError {
    match e {
        MapError::InvalidProblem(_) => CliError::validation("map_solver", e.to_string()),
        MapError::NonFinite(_) => CliError::numerical("map_solver", e.to_string()),
    }
}

fn dom_err(e: InfiniteError) -> CliError {
    match e {
        InfiniteError::InvalidInput(_) => CliError::validation("infinite", e.to_string()),
        _ => CliError::numerical("infinite", e.to_string()),
    }
}

fn io_err(ctx: &RunContext, name: &str) -> impl Fn(std::io::Error) -> CliError {
    let path = ctx.out.join(name);
    move |e| CliError::io(&path, e)
}

fn om_options(n: &Numerics) -> OmOptions {
    OmOptions {
        t_panels: n.t_panels,
        t_nodes_per_panel: n.t_nodes_per_panel,
        jump: jump_quad(n),
        ..OmOptions::default()
    }
}

fn jump_quad(n: &Numerics) -> JumpQuadSpec {
    JumpQuadSpec {
        theta_nodes: n.theta_nodes,
        z_nodes: n.z_nodes,
    }
}

fn finite<'a>(model: &'a Model, command: &str) -> Result<&'a FiniteActivityModel, CliError> {
    match model {
        Model::Finite(m) => Ok(m),
        Model::Infinite(_) => Err(CliError::Config(format!(
            "`{command}` needs a finite-activity model (kind = \"finite\")"
        ))),
    }
}

fn infinite<'a>(model: &'a Model, command: &str) -> Result<&'a InfiniteActivityModel, CliError> {
    match model {
        Model::Infinite(m) => Ok(m),
        Model::Finite(_) => Err(CliError::Config(format!(
            "`{command}` needs kind = \"infinite\" or \"embedded\""
        ))),
    }
}

fn validate(model: &Model, n: &Numerics) -> Result<ValidationReport, CliError> {
    match model {
        Model::Finite(m) => {
            let opts = FiniteValidationOptions {
                allow_zero_rate: m.lambda_expr().is_zero(),
                ..FiniteValidationOptions::default()
            };
            validate_finite_model(m, &n.grid_for(m.dim()), opts)
        }
        Model::Infinite(m) => validate_infinite_model(m, &n.infinite_grid, n.eta),
    }
    .map_err(|e| CliError::validation("models", e.to_string()))
}

/// `1.1 max λ` over the numerics grid.
fn default_lambda_bar(m: &FiniteActivityModel, n: &Numerics) -> f64 {
    let d = m.dim();
    let top = n
        .grid_for(d)
        .points()
        .iter()
        .map(|p| m.lambda_at(&p[..d]))
        .fold(0.0, f64::max);
    1.1 * top
}

pub(crate) fn dispatch(command: Command, ctx: &mut RunContext) -> Result<Summary, (CliError, Summary)> {
    let mut summary = Summary::new();
    match run_command(command, ctx, &mut summary) {
        Ok(()) => Ok(summary),
        Err(e) => Err((e, summary)),
    }
}

fn run_command(command: Command, ctx: &mut RunContext, summary: &mut Summary) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    if command != Command::Validate && command.name() != cfg.experiment.name() {
        return Err(CliError::Config(format!(
            "subcommand `{}` does not match the [experiment.{}] block",
            command.name(),
            cfg.experiment.name()
        )));
    }
    let model = cfg.model.build()?;
    let report = validate(&model, &cfg.numerics)?;
    ctx.write_json("validation.json", &report)?;
    summary.insert("validation_passed".into(), f64::from(u8::from(report.passed)));
    if command == Command::Validate {
        print!("{}", report.to_text());
    }
    if !report.passed {
        let failed: Vec<String> = report
            .failures()
            .map(|c| match &c.witness {
                Some(w) => format!("{} at {w:?}", c.name),
                None => c.name.clone(),
            })
            .collect();
        return Err(CliError::validation(
            "models",
            format!("model validation failed: {}", failed.join("; ")),
        ));
    }
    if command == Command::Validate {
        return Ok(());
    }
    let n = &cfg.numerics;
    match &cfg.experiment {
        Experiment::Validate(_) => Ok(()),
        Experiment::Simulate(e) => simulate(ctx, finite(&model, "simulate")?, n, e, summary),
        Experiment::SolveFpe(e) => solve_fpe(ctx, finite(&model, "solve-fpe")?, n, e, summary),
        Experiment::FlowCompare(e) => flow_compare(ctx, finite(&model, "flow-compare")?, n, e, summary),
        Experiment::OmEval(e) => om_eval(ctx, finite(&model, "om-eval")?, n, e, summary),
        Experiment::TubeRatio(e) => tube_ratio(ctx, finite(&model, "tube-ratio")?, n, e, summary),
        Experiment::Map(e) => map(ctx, finite(&model, "map")?, n, e, summary),
        Experiment::DomEval(e) => dom_eval(ctx, infinite(&model, "dom-eval")?, n, e, summary),
    }
}

fn simulate(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &SimulateExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let lambda_bar = e.lambda_bar.unwrap_or_else(|| default_lambda_bar(m, n));
    let seed = ctx.seed;
    let paths = par_paths(e.n_paths, |k| {
        simulate_jump_diffusion_path(m, &e.x0, e.t_end, e.n_steps, lambda_bar, seed, k)
    })
    .into_iter()
    .collect::<Result<Vec<DiscretePath>, _>>()
    .map_err(sim_err)?;
    let mut csv = Vec::new();
    for (k, p) in paths.iter().enumerate() {
        let mut one = Vec::new();
        p.write_csv(&mut one).map_err(io_err(ctx, "paths.csv"))?;
        let text = String::from_utf8(one).expect("csv is utf-8");
        for (i, line) in text.lines().enumerate() {
            match (i, k) {
                (0, 0) => writeln!(csv, "path,{line}"),
                (0, _) => Ok(()),
                _ => writeln!(csv, "{k},{line}"),
            }
            .map_err(io_err(ctx, "paths.csv"))?;
        }
    }
    ctx.write("paths.csv", &csv)?;
    let d = m.dim();
    let count = paths.len().max(1) as f64;
    for j in 0..d {
        let mean = paths.iter().map(|p| p.final_state()[j]).sum::<f64>() / count;
        summary.insert(format!("mean_final_x{}", j + 1), mean);
    }
    let jumps = paths.iter().map(|p| p.jump_log.len()).sum::<usize>() as f64 / count;
    summary.insert("mean_jump_count".into(), jumps);
    summary.insert("lambda_bar".into(), lambda_bar);
    ctx.write_json("summary.json", summary)
}

fn solve_fpe(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &SolveFpeExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let mut opts = FpeOptions::new(n.grid_for(m.dim()), e.t_end, e.steps, e.epsilon);
    opts.nodes_per_cell = n.nodes_per_cell;
    opts.tol_mass = n.tol_mass;
    opts.store_every = e.store_every;
    let field = solve_levy_fpe(m, &e.x0, &opts).map_err(fpe_err)?;
    let mut bin = Vec::new();
    field.write_binary(&mut bin).map_err(io_err(ctx, "density.bin"))?;
    ctx.write("density.bin", &bin)?;
    let slices = if e.csv_times.is_empty() {
        vec![field.times().len() - 1]
    } else {
        e.csv_times
            .iter()
            .map(|&t| {
                field.slice_index(t).ok_or_else(|| {
                    CliError::validation("levy_fpe", format!("no stored slice at t = {t}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut csv = Vec::new();
    field.write_csv_slices(&mut csv, &slices).map_err(io_err(ctx, "slices.csv"))?;
    ctx.write("slices.csv", &csv)?;
    summary.insert("final_mass".into(), *field.mass().last().unwrap_or(&f64::NAN));
    summary.insert("clipped_mass".into(), field.clipped_mass());
    summary.insert("integrated_rate".into(), field.integrated_rate(m));
    ctx.write_json("fpe_summary.json", summary)
}

fn write_marginals(ctx: &mut RunContext, name: &str, s: &FlowSamples, d: usize) -> Result<(), CliError> {
    let mut csv = Vec::new();
    let sink = io_err(ctx, name);
    write!(csv, "t").map_err(&sink)?;
    for k in 1..=d {
        write!(csv, ",x{k}").map_err(&sink)?;
    }
    writeln!(csv).map_err(&sink)?;
    for (t, rows) in s.times.iter().zip(&s.samples) {
        for row in rows.chunks(d) {
            write!(csv, "{t:e}").map_err(&sink)?;
            for v in row {
                write!(csv, ",{v:e}").map_err(&sink)?;
            }
            writeln!(csv).map_err(&sink)?;
        }
    }
    ctx.write(name, &csv)
}

#[derive(Serialize)]
struct SnapshotComparison {
    t: f64,
    component: usize,
    flow_vs_jump: jumpom::stats::Comparison,
    noise_floor: Option<jumpom::stats::Comparison>,
    point_mass_control: Option<jumpom::stats::Comparison>,
}

fn flow_compare(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &FlowCompareExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let d = m.dim();
    let mut fpe = FpeOptions::new(n.grid_for(d), e.t_end, e.fpe_steps, e.epsilon);
    fpe.nodes_per_cell = n.nodes_per_cell;
    fpe.tol_mass = n.tol_mass;
    let field = solve_levy_fpe(m, &e.x0, &fpe).map_err(fpe_err)?;
    let quad = FlowQuadrature {
        theta_nodes: n.theta_nodes,
        z_nodes: n.z_nodes,
    };
    let table = FlowDrift::with_options(m, &field, 1e-12, quad)
        .map_err(flow_err)?
        .tabulate(n.nodes_per_cell);
    let lambda_bar = e.lambda_bar.unwrap_or_else(|| default_lambda_bar(m, n));
    let mut opts = FlowSimOptions {
        n_paths: e.n_paths,
        t_end: e.t_end,
        n_steps: e.n_steps,
        snapshots: e.snapshots.clone(),
        seed: ctx.seed,
        start: FlowStart::Mollified,
    };
    let flow = simulate_flow_sde(&table, m, &e.x0, e.epsilon, &opts).map_err(flow_err)?;
    let jump = simulate_jump_marginals(m, &e.x0, e.epsilon, lambda_bar, &opts).map_err(sim_err)?;
    let floor = if e.noise_floor {
        let o = FlowSimOptions {
            seed: ctx.seed ^ FLOOR_SEED_MIX,
            ..opts.clone()
        };
        Some(simulate_jump_marginals(m, &e.x0, e.epsilon, lambda_bar, &o).map_err(sim_err)?)
    } else {
        None
    };
    let control = if e.point_mass_control {
        opts.start = FlowStart::PointMass;
        Some(simulate_flow_sde(&table, m, &e.x0, e.epsilon, &opts).map_err(flow_err)?)
    } else {
        None
    };
    write_marginals(ctx, "marginals_jump.csv", &jump, d)?;
    write_marginals(ctx, "marginals_flow.csv", &flow, d)?;
    if let Some(s) = &floor {
        write_marginals(ctx, "marginals_jump_floor.csv", s, d)?;
    }
    if let Some(s) = &control {
        write_marginals(ctx, "marginals_control.csv", s, d)?;
    }
    let mut rows = Vec::new();
    for (k, &t) in e.snapshots.iter().enumerate() {
        for c in 0..d {
            let a = jump.component(k, c, d);
            let cmp = |b: &FlowSamples| compare_marginals(&b.component(k, c, d), &a, e.metric, n.bootstrap, ctx.seed);
            let row = SnapshotComparison {
                t,
                component: c + 1,
                flow_vs_jump: cmp(&flow),
                noise_floor: floor.as_ref().map(cmp),
                point_mass_control: control.as_ref().map(cmp),
            };
            let key = format!("t={t}/x{}", c + 1);
            summary.insert(format!("{key}/flow"), row.flow_vs_jump.statistic);
            if let Some(f) = &row.noise_floor {
                summary.insert(format!("{key}/floor"), f.statistic);
            }
            if let Some(f) = &row.point_mass_control {
                summary.insert(format!("{key}/control"), f.statistic);
            }
            rows.push(row);
        }
    }
    summary.insert("flow_resampled".into(), flow.resampled as f64);
    ctx.write_json("comparison.json", &rows)
}

fn om_eval(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &OmEvalExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let comps: Vec<&str> = e.path.iter().map(String::as_str).collect();
    let psi = SmoothPath::parse(&comps, e.t_end).map_err(om_err)?;
    if psi.dim() != m.dim() {
        return Err(CliError::validation(
            "om",
            format!("path has {} components, model dimension {}", psi.dim(), m.dim()),
        ));
    }
    if let Some(x0) = &e.x0 {
        psi.check_start(x0).map_err(om_err)?;
    }
    let opts = om_options(n);
    let om = om_action(m, &psi, &opts).map_err(om_err)?;
    let classical = classical_om_action(m.drift_exprs(), m.sigma(), &psi, &opts).map_err(om_err)?;
    summary.insert("total".into(), om.total);
    summary.insert("kinetic".into(), om.kinetic);
    summary.insert("divergence".into(), om.divergence);
    summary.insert("ell_tilde".into(), om.ell_tilde);
    summary.insert("classical_total".into(), classical.total);
    #[derive(Serialize)]
    struct Out<'a> {
        om: &'a jumpom::om::OmEvaluation,
        classical: &'a jumpom::om::OmEvaluation,
    }
    ctx.write_json(
        "om.json",
        &Out {
            om: &om,
            classical: &classical,
        },
    )
}

fn tube_ratio(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &TubeRatioExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let parse = |p: &[String]| {
        let comps: Vec<&str> = p.iter().map(String::as_str).collect();
        SmoothPath::parse(&comps, e.t_end).map_err(om_err)
    };
    let psi1 = parse(&e.path1)?;
    let psi2 = parse(&e.path2)?;
    let opts = TubeOptions {
        lambda_bar: e.lambda_bar,
        monitor: e.monitor,
        ..TubeOptions::new(e.n_paths, e.n_steps, ctx.seed)
    };
    let rows = om_ratio_experiment(m, &psi1, &psi2, &e.deltas, &opts, &om_options(n)).map_err(tube_err)?;
    let mut csv = Vec::new();
    write_ratio_csv(&rows, &mut csv).map_err(io_err(ctx, "ratio.csv"))?;
    ctx.write("ratio.csv", &csv)?;
    for r in &rows {
        let key = format!("delta={}", r.delta);
        summary.insert(format!("{key}/p1"), r.tube1.p_hat);
        summary.insert(format!("{key}/p2"), r.tube2.p_hat);
        summary.insert(format!("{key}/ln_ratio"), r.ln_ratio);
        summary.insert(format!("{key}/gap"), r.gap);
    }
    if let Some(r) = rows.first() {
        summary.insert("delta_s".into(), r.delta_s);
    }
    ctx.write_json("ratio.json", &rows)
}

fn map(
    ctx: &mut RunContext,
    m: &FiniteActivityModel,
    n: &Numerics,
    e: &MapExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let mut p = MapProblem::new(m, &e.x0, &e.x_t, e.t_end, e.n_knots);
    p.jump_quad = jump_quad(n);
    p.divergence_shift = e.divergence_shift;
    p.optimizer = OptimizerOptions {
        max_iters: n.max_iters,
        grad_tol: n.grad_tol,
        step_rule: n.step_rule,
        ..OptimizerOptions::default()
    };
    let sol = minimize_action(&p, None).map_err(map_err)?;
    let mut csv = Vec::new();
    sol.path.write_csv(&mut csv).map_err(io_err(ctx, "map_path.csv"))?;
    ctx.write("map_path.csv", &csv)?;
    #[derive(Serialize)]
    struct Out<'a> {
        action: f64,
        report: &'a jumpom::map_solver::ConvergenceReport,
    }
    ctx.write_json(
        "convergence.json",
        &Out {
            action: sol.action,
            report: &sol.report,
        },
    )?;
    summary.insert("action".into(), sol.action);
    summary.insert("grad_norm".into(), sol.report.grad_norm);
    summary.insert("iterations".into(), sol.report.iterations as f64);
    if !sol.report.converged {
        return Err(CliError::numerical(
            "map_solver",
            format!(
                "no convergence after {} iterations: gradient norm {:e} > {:e} ({})",
                sol.report.iterations, sol.report.grad_norm, n.grad_tol, sol.report.message
            ),
        ));
    }
    Ok(())
}

fn dom_eval(
    ctx: &mut RunContext,
    m: &InfiniteActivityModel,
    n: &Numerics,
    e: &DomEvalExp,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let path = match (&e.path_csv, &e.path) {
        (Some(file), _) => {
            let f = File::open(file).map_err(|err| CliError::Config(format!("{}: {err}", file.display())))?;
            DiscretePath::read_csv(BufReader::new(f)).map_err(sim_err)?
        }
        (None, Some(expr)) => {
            let psi = ExpressionAst::parse(expr, &["t"])
                .map_err(|err| CliError::validation("expr", format!("path `{expr}`: {err}")))?;
            let (t_end, steps) = (e.t_end.unwrap_or(1.0), e.n_steps.unwrap_or(1));
            let x = (0..=steps)
                .map(|i| psi.eval(&[t_end * i as f64 / steps as f64]))
                .collect();
            DiscretePath::uniform(1, t_end, x).map_err(sim_err)?
        }
        (None, None) => return Err(CliError::Config("dom-eval needs a path".into())),
    };
    let opts = DomOptions {
        z_cutoff: n.z_cutoff,
        z_max: e.z_max,
        theta_nodes: n.theta_nodes,
        z_nodes_per_panel: n.z_nodes_per_panel,
        fd_step: n.fd_step,
        resolution_check: e.resolution_check,
    };
    let ev = discrete_om_action(m, &path, &opts).map_err(dom_err)?;
    summary.insert("total".into(), ev.total);
    summary.insert("kinetic".into(), ev.kinetic);
    summary.insert("divergence".into(), ev.divergence);
    summary.insert("omitted_mass_bound".into(), ev.omitted_mass_bound);
    if let Some(s) = ev.nonlocal_spread {
        summary.insert("nonlocal_spread".into(), s);
    }
    ctx.write_json("dom.json", &ev)
}
