use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;

use log::info;
use offload_core::executor::{execute_plan, sequential_oracle, ExecMode};
use offload_core::sim::{
    compare_approaches, simulate_iteration, stride_point, ApproachConfig, ComparisonTable,
    IterationModel, PhaseBreakdown, StrideSweep, Timeline, Workload,
};
use offload_core::{
    estimate_update_time, optimal_stride, Placement, ShardedOptimizer, StrideResult, SystemProfile,
    UpdatePlan, UpdateRatio,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{slug, Outputs};
use crate::scenario::{Format, ProfileRef, Scenario};

/// Largest rank the numeric executor accepts, in parameters.
pub const MAX_EXEC_PARAMS: u64 = 1 << 24;

/// Resolved settings shared by the scenario-driven subcommands.
pub struct Ctx {
    pub scenario: Scenario,
    pub profile: SystemProfile,
    pub workload: Workload,
    pub out: PathBuf,
    pub format: Format,
}

impl Ctx {
    pub fn new(scenario: Scenario, out: Option<PathBuf>, format: Option<Format>) -> Result<Self, CliError> {
        let profile = scenario.profile.resolve()?;
        let workload = scenario.workload()?;
        let spec = scenario.output.clone().unwrap_or_default();
        let out = out.or(spec.dir).unwrap_or_else(|| PathBuf::from("out"));
        let format = format.or(spec.format).unwrap_or(Format::Csv);
        Ok(Ctx {
            scenario,
            profile,
            workload,
            out,
            format,
        })
    }

    fn trace(&self, outputs: &mut Outputs, stem: &str, tl: &Timeline) -> Result<String, CliError> {
        match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                outputs.add(name.clone(), tl.to_csv());
                Ok(name)
            }
            Format::Json => {
                let name = format!("{stem}.json");
                outputs.add_json(name.clone(), &tl.events)?;
                Ok(name)
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PlanSummary {
    pub profile: Option<String>,
    pub k_real: Option<f64>,
    pub k: String,
    pub gpu_fraction: f64,
    pub num_subgroups: usize,
    pub subgroup_size: u64,
    pub estimate_s: f64,
}

/// Profile-only planning uses this workload when no scenario is given.
const DEFAULT_PLAN_SUBGROUPS: usize = 12;
const DEFAULT_PLAN_SIZE: u64 = 100_000_000;

pub fn plan(
    profile_ref: &ProfileRef,
    scenario: Option<&Scenario>,
    emit_actions: bool,
    out: PathBuf,
) -> Result<String, CliError> {
    let profile = profile_ref.resolve()?;
    let r: StrideResult = optimal_stride(&profile);
    let (n, s) = match scenario {
        Some(sc) => {
            let w = sc.workload()?;
            (w.num_subgroups(), sc.workload.subgroup_size)
        }
        None => (DEFAULT_PLAN_SUBGROUPS, DEFAULT_PLAN_SIZE),
    };
    let estimate = estimate_update_time(&profile, n as u64, s, r.k, 0);
    let mut text = String::new();
    match r.k_real {
        Some(kr) => writeln!(text, "k_real={kr:.3}").unwrap(),
        None => writeln!(text, "k_real=none (host update never saturates the channel)").unwrap(),
    }
    match r.k {
        UpdateRatio::AllCpu => writeln!(text, "k=ALL_CPU").unwrap(),
        UpdateRatio::PerGpu(k) => writeln!(text, "k={k}").unwrap(),
    }
    writeln!(text, "gpu_fraction={:.4}", r.gpu_fraction).unwrap();
    writeln!(text, "estimate_s={estimate:.6} (N={n}, S={s})").unwrap();
    if profile_ref.name() == Some("h100-node") {
        let mut alt = profile.clone();
        alt.host_downscale_params_per_s = profile.host_conversion_bytes_per_s / 4.0;
        if let Some(kr) = optimal_stride(&alt).k_real {
            writeln!(
                text,
                "caveat: host conversion rate is quoted in GB/s; read on the FP16 side it is \
                 {:.1}e9 params/s, read on the FP32 side {:.1}e9 params/s, which gives k_real={kr:.3}",
                profile.host_downscale_params_per_s / 1e9,
                alt.host_downscale_params_per_s / 1e9,
            )
            .unwrap();
        }
    }
    if emit_actions {
        let approach = scenario
            .and_then(|sc| {
                sc.approaches
                    .iter()
                    .find(|a| matches!(a, ApproachConfig::Interleaved { .. }))
                    .cloned()
            })
            .unwrap_or_else(|| ApproachConfig::interleaved(None));
        let plan: UpdatePlan = approach.plan(n, &profile)?;
        let mut outputs = Outputs::new();
        outputs.add_json("actions.json", &plan)?;
        outputs.add_json(
            "plan.json",
            &PlanSummary {
                profile: profile_ref.name().map(str::to_string),
                k_real: r.k_real,
                k: r.k.to_string(),
                gpu_fraction: r.gpu_fraction,
                num_subgroups: n,
                subgroup_size: s,
                estimate_s: estimate,
            },
        )?;
        for p in outputs.commit(&out)? {
            writeln!(text, "wrote {}", p.display()).unwrap();
        }
    }
    Ok(text)
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub approach: String,
    pub ratio: String,
    pub makespan_ns: u64,
    pub phases: PhaseBreakdown,
    pub peak_fast_bytes: u64,
    pub spillover_ns: u64,
    pub retained_subgroups: usize,
    pub trace: String,
}

pub fn simulate(ctx: &Ctx) -> Result<String, CliError> {
    let mut outputs = Outputs::new();
    let mut runs = Vec::new();
    let mut text = String::new();
    for (i, a) in ctx.scenario.approaches.iter().enumerate() {
        let r = simulate_iteration(a, &ctx.profile, &ctx.scenario.iteration, &ctx.workload)?;
        r.timeline.validate()?;
        let trace = ctx.trace(&mut outputs, &format!("trace-{i}-{}", slug(&r.label)), &r.timeline)?;
        writeln!(
            text,
            "{:<32} k={:<8} update={:.4}s total={:.4}s spillover={:.4}s",
            r.label,
            r.ratio.to_string(),
            r.phases.update_s,
            r.phases.total_s(),
            r.timeline.spillover_ns as f64 * 1e-9,
        )
        .unwrap();
        runs.push(RunSummary {
            approach: r.label,
            ratio: r.ratio.to_string(),
            makespan_ns: r.timeline.makespan_ns,
            phases: r.phases,
            peak_fast_bytes: r.timeline.peak_fast_bytes,
            spillover_ns: r.timeline.spillover_ns,
            retained_subgroups: r.retained_subgroups,
            trace,
        });
    }
    outputs.add_json("summary.json", &runs)?;
    finish(outputs, ctx, text)
}

#[derive(Debug, Serialize)]
pub struct ExecSummary {
    pub approach: String,
    pub ratio: String,
    pub seed: u64,
    pub makespan_ns: u64,
    pub peak_fast_bytes: u64,
    pub spillover_ns: u64,
    pub grad_flush_s: f64,
    pub retained_subgroups: usize,
    pub matches_oracle: bool,
    pub model16_coherent: bool,
    /// Hash over the final FP32 state bits.
    pub state_digest: String,
    pub trace: String,
}

fn digest(opt: &ShardedOptimizer) -> String {
    let mut h = DefaultHasher::new();
    for sg in &opt.subgroups {
        for xs in [&sg.params, &sg.momentum, &sg.variance] {
            for x in xs.iter() {
                x.to_bits().hash(&mut h);
            }
        }
    }
    format!("{:016x}", h.finish())
}

pub fn execute(ctx: &Ctx, mode: ExecMode) -> Result<String, CliError> {
    let seed = ctx
        .scenario
        .seed
        .ok_or_else(|| CliError::Validation("execute needs a seed in the scenario".into()))?;
    let total = ctx.workload.total_params();
    if total > MAX_EXEC_PARAMS {
        return Err(CliError::Validation(format!(
            "rank holds {total} parameters; the executor is limited to {MAX_EXEC_PARAMS}"
        )));
    }
    let hyper = ctx.scenario.hyper.unwrap_or_default();
    let sizes: Vec<usize> = ctx.workload.subgroup_sizes.iter().map(|&s| s as usize).collect();
    let start = ShardedOptimizer::seeded(&sizes, seed)?;
    let oracle = sequential_oracle(&start, &hyper)?;

    let mut outputs = Outputs::new();
    let mut runs = Vec::new();
    let mut text = String::new();
    for (i, a) in ctx.scenario.approaches.iter().enumerate() {
        let plan = a.plan(sizes.len(), &ctx.profile)?;
        let report = execute_plan(&plan, start.clone(), &ctx.profile, &hyper, mode)?;
        report.timeline.validate()?;
        let label = a.label();
        let matches = report.optimizer.bit_identical(&oracle);
        if !matches {
            return Err(CliError::Internal(format!("{label}: result differs from the sequential reference")));
        }
        let trace = ctx.trace(&mut outputs, &format!("exec-{i}-{}", slug(&label)), &report.timeline)?;
        let grad_flush_s = report.grad_flush.iter().map(|f| f.total_secs).sum();
        writeln!(
            text,
            "{label:<32} update={:.4}s flush={grad_flush_s:.4}s matches_reference=true",
            report.timeline.makespan_ns as f64 * 1e-9
        )
        .unwrap();
        runs.push(ExecSummary {
            approach: label,
            ratio: a.ratio(&ctx.profile).to_string(),
            seed,
            makespan_ns: report.timeline.makespan_ns,
            peak_fast_bytes: report.timeline.peak_fast_bytes,
            spillover_ns: report.timeline.spillover_ns,
            grad_flush_s,
            retained_subgroups: report.retained.iter().filter(|&&r| r).count(),
            matches_oracle: matches,
            model16_coherent: report.optimizer.model16_coherent(),
            state_digest: digest(&report.optimizer),
            trace,
        });
    }
    outputs.add_json("exec-summary.json", &runs)?;
    finish(outputs, ctx, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Stride,
    Ratio,
    Microbatch,
}

#[derive(Debug, Serialize)]
struct RatioRow {
    static_ratio: f64,
    twin_flow_update_s: f64,
    interleaved_update_s: f64,
    speedup: f64,
}

#[derive(Debug, Serialize)]
struct MicrobatchRow {
    scale: f64,
    approach: String,
    total_s: f64,
    update_s: f64,
    exposed_flush_s: f64,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    if jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))
}

pub fn sweep(ctx: &Ctx, axis: Axis, jobs: usize) -> Result<String, CliError> {
    let pool = pool(jobs)?;
    let spec = ctx.scenario.sweep.clone().unwrap_or_default();
    let mut outputs = Outputs::new();
    let mut text = String::new();
    match axis {
        Axis::Stride => {
            let ks = spec.k.unwrap_or_else(|| (1..=6).collect());
            if ks.is_empty() {
                return Err(CliError::Validation("sweep.k is empty".into()));
            }
            let sizes = &ctx.workload.subgroup_sizes;
            let points = pool.install(|| {
                ks.par_iter()
                    .map(|&k| stride_point(&ctx.profile, sizes, Some(k)))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let all_cpu = stride_point(&ctx.profile, sizes, None)?;
            let sweep = StrideSweep::from_points(points, all_cpu.makespan_ns)?;
            writeln!(text, "{:>4} {:>14} {:>12}", "k", "makespan_s", "Gparams/s").unwrap();
            for p in &sweep.points {
                writeln!(text, "{:>4} {:>14.4} {:>12.3}", p.k, p.makespan_ns as f64 * 1e-9, p.params_per_s / 1e9)
                    .unwrap();
            }
            writeln!(text, "ALL_CPU {:.4}s", all_cpu.makespan_ns as f64 * 1e-9).unwrap();
            writeln!(text, "best k={} (model: {})", sweep.best_k, optimal_stride(&ctx.profile).k).unwrap();
            if sweep.all_cpu_wins {
                writeln!(text, "every swept k is slower than ALL_CPU").unwrap();
            }
            if ctx.format == Format::Csv {
                let mut csv = String::from("k,makespan_ns,params_per_s\n");
                for p in &sweep.points {
                    writeln!(csv, "{},{},{}", p.k, p.makespan_ns, p.params_per_s).unwrap();
                }
                outputs.add("sweep-stride.csv", csv);
            }
            outputs.add_json("sweep-stride.json", &sweep)?;
        }
        Axis::Ratio => {
            let ratios = spec.ratios.unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
            if ratios.is_empty() || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(CliError::Validation("sweep.ratios must be non-empty and within [0, 1]".into()));
            }
            let k = ctx.scenario.approaches.iter().find_map(|a| match a {
                ApproachConfig::Interleaved { k, .. } => Some(*k),
                _ => None,
            });
            let k = k.flatten();
            let w = &ctx.workload;
            let m = &ctx.scenario.iteration;
            let rows = pool.install(|| {
                ratios
                    .par_iter()
                    .map(|&r| {
                        let tf = simulate_iteration(&ApproachConfig::TwinFlow { static_ratio: r }, &ctx.profile, m, w)?;
                        let il = simulate_iteration(
                            &ApproachConfig::Interleaved {
                                k,
                                static_ratio: r,
                                placement: Placement::StaticLast,
                            },
                            &ctx.profile,
                            m,
                            w,
                        )?;
                        Ok(RatioRow {
                            static_ratio: r,
                            twin_flow_update_s: tf.phases.update_s,
                            interleaved_update_s: il.phases.update_s,
                            speedup: tf.phases.update_s / il.phases.update_s,
                        })
                    })
                    .collect::<Result<Vec<_>, offload_core::Error>>()
            })?;
            writeln!(text, "{:>6} {:>14} {:>14} {:>8}", "ratio", "twin_flow_s", "interleaved_s", "speedup").unwrap();
            let mut csv = String::from("static_ratio,twin_flow_update_s,interleaved_update_s,speedup\n");
            for r in &rows {
                writeln!(
                    text,
                    "{:>6.2} {:>14.4} {:>14.4} {:>7.2}x",
                    r.static_ratio, r.twin_flow_update_s, r.interleaved_update_s, r.speedup
                )
                .unwrap();
                writeln!(csv, "{},{},{},{}", r.static_ratio, r.twin_flow_update_s, r.interleaved_update_s, r.speedup)
                    .unwrap();
            }
            if ctx.format == Format::Csv {
                outputs.add("sweep-ratio.csv", csv);
            }
            outputs.add_json("sweep-ratio.json", &rows)?;
        }
        Axis::Microbatch => {
            let scales = spec.microbatch_scales.unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
            if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(CliError::Validation("sweep.microbatch_scales must be positive".into()));
            }
            let base = &ctx.scenario.iteration;
            let jobs: Vec<(f64, &ApproachConfig)> = scales
                .iter()
                .flat_map(|&s| ctx.scenario.approaches.iter().map(move |a| (s, a)))
                .collect();
            let rows = pool.install(|| {
                jobs.par_iter()
                    .map(|&(scale, a)| {
                        let m = IterationModel {
                            fwd_ns: (base.fwd_ns as f64 * scale).round() as u64,
                            bwd_ns: (base.bwd_ns as f64 * scale).round() as u64,
                            ..base.clone()
                        };
                        let r = simulate_iteration(a, &ctx.profile, &m, &ctx.workload)?;
                        Ok(MicrobatchRow {
                            scale,
                            approach: r.label,
                            total_s: r.phases.total_s(),
                            update_s: r.phases.update_s,
                            exposed_flush_s: r.phases.exposed_flush_s,
                        })
                    })
                    .collect::<Result<Vec<_>, offload_core::Error>>()
            })?;
            writeln!(text, "{:>6} {:<32} {:>10} {:>10}", "scale", "approach", "total_s", "update_s").unwrap();
            let mut csv = String::from("scale,approach,total_s,update_s,exposed_flush_s\n");
            for r in &rows {
                writeln!(text, "{:>6.2} {:<32} {:>10.4} {:>10.4}", r.scale, r.approach, r.total_s, r.update_s).unwrap();
                writeln!(csv, "{},\"{}\",{},{},{}", r.scale, r.approach, r.total_s, r.update_s, r.exposed_flush_s)
                    .unwrap();
            }
            if ctx.format == Format::Csv {
                outputs.add("sweep-microbatch.csv", csv);
            }
            outputs.add_json("sweep-microbatch.json", &rows)?;
        }
    }
    finish(outputs, ctx, text)
}

pub fn compare(ctx: &Ctx) -> Result<String, CliError> {
    let table: ComparisonTable =
        compare_approaches(&ctx.profile, &ctx.workload, &ctx.scenario.iteration, &ctx.scenario.approaches)?;
    let mut text = String::new();
    writeln!(
        text,
        "{:<32} {:>8} {:>10} {:>10} {:>9} {:>9}",
        "approach", "k", "update_s", "total_s", "update_x", "total_x"
    )
    .unwrap();
    let mut csv = String::from("approach,k,update_s,total_s,update_speedup,total_speedup,peak_fast_bytes,spillover_ns\n");
    for r in &table.rows {
        writeln!(
            text,
            "{:<32} {:>8} {:>10.4} {:>10.4} {:>8.2}x {:>8.2}x",
            r.label,
            r.ratio.to_string(),
            r.phases.update_s,
            r.phases.total_s(),
            r.update_speedup,
            r.total_speedup
        )
        .unwrap();
        writeln!(
            csv,
            "\"{}\",{},{},{},{},{},{},{}",
            r.label,
            r.ratio,
            r.phases.update_s,
            r.phases.total_s(),
            r.update_speedup,
            r.total_speedup,
            r.peak_fast_bytes,
            r.spillover_ns
        )
        .unwrap();
    }
    let mut outputs = Outputs::new();
    if ctx.format == Format::Csv {
        outputs.add("compare.csv", csv);
    }
    outputs.add_json("compare.json", &table)?;
    finish(outputs, ctx, text)
}

fn finish(outputs: Outputs, ctx: &Ctx, mut text: String) -> Result<String, CliError> {
    info!("writing {} file(s) to {}", outputs.names().count(), ctx.out.display());
    for p in outputs.commit(&ctx.out)? {
        writeln!(text, "wrote {}", p.display()).unwrap();
    }
    Ok(text)
}
