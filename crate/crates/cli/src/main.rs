//! `linser`: runs one experiment from a JSON config and writes its artifacts.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use linser_core::bergman::{convergence_scan, MOMENT_ORDER};
use linser_core::counterexample::{build_counterexample, divergence_scan, find_annuli, pushforward_rescue, AnnuliSearch};
use linser_core::energy::{bm_measure, energy_derivative_scan, kappa_energy_diff, volume_ratio_limit_check};
use linser_core::envelopes::{envelope_iterate, radial_envelope_oracle, EnvelopeMode, DEFAULT_FACETS};
use linser_core::geometry::{circle_quadrature, Descriptor, QuadratureMeasure, SampleSet};
use linser_core::io::{write_csv, write_envelope, write_json};
use linser_core::series::{fiber_degree, fit_growth, monomial_closure_and_degree, okounkov_body, SeriesSpec};
use linser_core::weights::{radial_profile, Direction, Weight, WeightFamily};
use linser_core::LabError;
use serde::Serialize;
use serde_json::{json, Value};

use config::{Command, ConfigError, ExperimentConfig, GridSpec};

#[derive(Parser, Debug)]
#[command(name = "linser", version, about = "Experiments on graded linear series and their envelopes")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "artifacts")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kmax: Option<u32>,
    #[arg(long)]
    quiet: bool,
    /// Name artifacts `<command>.{json,csv}` and zero the timings.
    #[arg(long)]
    deterministic_names: bool,
}

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// What one experiment produced.
struct Outcome {
    summary: Value,
    header: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
    checks: Vec<Check>,
    envelope: Option<linser_core::envelopes::EnvelopeGrid>,
}

enum Failure {
    Usage(String),
    Numeric(LabError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Numeric(other),
        }
    }
}

fn disk() -> Descriptor {
    Descriptor::Disk { radius: 1.0, n_r: 4, n_theta: 16 }
}

fn sphere() -> Descriptor {
    Descriptor::Sphere { n_rings: 31, n_theta: 16 }
}

fn target_measure(d: &Descriptor) -> Result<QuadratureMeasure, Failure> {
    match d {
        Descriptor::Circle { radius, n } => Ok(circle_quadrature(*radius, *n)?),
        other => Ok(bm_measure(other, 64)?.normalized()?),
    }
}

fn t_grid(cfg: &ExperimentConfig, default: GridSpec) -> Vec<f64> {
    cfg.t_grid.unwrap_or(default).points()
}

fn run(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, Failure> {
    let tol = &cfg.tolerances;
    match cfg.command {
        Command::Kappa => {
            let spec = config::series(&cfg.series, SeriesSpec::even_degree())?;
            let fit = fit_growth(&spec, cfg.k_max.unwrap_or(200))?;
            let dims = spec.dims(cfg.k_max.unwrap_or(200))?;
            let mut checks = Vec::new();
            if let Ok(body) = okounkov_body(&spec, 32) {
                let rel = (fit.vol - body.vol_kappa).abs() / body.vol_kappa;
                checks.push(Check::new(
                    "growth-matches-okounkov",
                    fit.kappa == body.hull_dimension && rel <= tol.vol_relative,
                    format!("kappa {} vs {}, vol {} vs {}", fit.kappa, body.hull_dimension, fit.vol, body.vol_kappa),
                ));
            }
            Ok(Outcome {
                summary: json!({ "kappa": fit.kappa, "vol": fit.vol, "window": fit.window, "residual": fit.residual }),
                header: vec!["k", "dim"],
                rows: dims.iter().enumerate().map(|(k, d)| vec![k as f64, *d as f64]).collect(),
                checks,
                envelope: None,
            })
        }
        Command::Okounkov => {
            let spec = config::series(&cfg.series, SeriesSpec::even_degree())?;
            let body = okounkov_body(&spec, cfg.k_max.unwrap_or(32))?;
            let mut checks = Vec::new();
            let mut closure = Value::Null;
            if let Ok(c) = monomial_closure_and_degree(&spec) {
                let sat = c.saturation.as_ref().expect("closure carries its saturation");
                let closed = okounkov_body(sat, cfg.k_max.unwrap_or(32))?;
                let expected = c.generic_degree as f64 * body.vol_kappa;
                checks.push(Check::new(
                    "closure-multiplicity",
                    (closed.vol_kappa - expected).abs() <= 1e-12 * expected.max(1.0),
                    format!("vol(closure) {} vs degree {} x vol {}", closed.vol_kappa, c.generic_degree, body.vol_kappa),
                ));
                closure = json!({ "generic_degree": c.generic_degree, "vol_kappa": closed.vol_kappa, "series": sat });
            }
            let seed_note = linser_core::series::preimage_count(&spec, 6, seed).ok();
            Ok(Outcome {
                summary: json!({ "body": body, "closure": closure, "preimages": seed_note }),
                header: vec!["hull_dimension", "body_volume", "lattice_index", "vol_kappa"],
                rows: vec![vec![body.hull_dimension as f64, body.body_volume, body.lattice_index as f64, body.vol_kappa]],
                checks,
                envelope: None,
            })
        }
        Command::Bergman => {
            let spec = config::series(&cfg.series, SeriesSpec::full(1))?;
            let w = config::weight(&cfg.weight, Weight::PaperDisk)?;
            let set = config::descriptor(&cfg.set, disk())?;
            let target = target_measure(&config::descriptor(&cfg.target, Descriptor::Circle { radius: 1.0, n: 64 })?)?;
            let k_list = cfg.k_list.clone().unwrap_or_else(|| vec![16, 32, cfg.k_max.unwrap_or(64)]);
            let k_top = k_list.iter().copied().max().unwrap_or(1);
            let mu = bm_measure(&set, 2 * k_top * spec.line_degree())?;
            let kappa = fit_growth(&spec, 64)?.kappa;
            let rows = convergence_scan(&spec, &w, &mu, &k_list, kappa, None, &target, MOMENT_ORDER)?;
            let last = rows.last().map_or(f64::INFINITY, |r| r.discrepancy);
            let monotone = rows.windows(2).all(|r| r[1].discrepancy <= r[0].discrepancy);
            Ok(Outcome {
                summary: json!({ "kappa": kappa, "rows": rows }),
                header: vec!["k", "mass", "discrepancy", "runtime_ms"],
                rows: rows.iter().map(|r| vec![r.k as f64, r.mass, r.discrepancy, r.runtime_ms]).collect(),
                checks: vec![
                    Check::new("discrepancy", last <= tol.discrepancy, format!("{last:.6} at the last level")),
                    Check::new("nonincreasing", monotone, String::new()),
                ],
                envelope: None,
            })
        }
        Command::Envelope => {
            let spec = config::series(&cfg.series, SeriesSpec::full(1))?;
            let w = config::weight(&cfg.weight, Weight::PaperDisk)?;
            let set = config::descriptor(&cfg.set, disk())?;
            let t = t_grid(cfg, GridSpec { start: -1.5, end: 1.5, n: 13 });
            let env = envelope_iterate(
                &spec,
                &w,
                &SampleSet::from_descriptor(set.clone())?,
                &t,
                cfg.k_max.unwrap_or(32),
                &EnvelopeMode::Sup { facets: DEFAULT_FACETS },
            )?;
            let oracle = radial_envelope_oracle(&radial_profile(&w, &t)?, &set)?;
            let dist = env.sup_distance(&oracle)?;
            Ok(Outcome {
                summary: json!({ "sup_distance": dist, "gap": env.gap }),
                header: vec!["t", "iterate", "oracle"],
                rows: (0..t.len()).map(|i| vec![t[i], env.potential[i], oracle.potential[i]]).collect(),
                checks: vec![Check::new("oracle-distance", dist <= tol.envelope, format!("{dist:.6}"))],
                envelope: Some(env),
            })
        }
        Command::Energy => {
            let spec = config::series(&cfg.series, SeriesSpec::full(1))?;
            let w0 = config::weight(&cfg.weight, Weight::PaperDisk)?;
            let w1 = config::weight(&cfg.weight1, Weight::fubini_study())?;
            let set = config::descriptor(&cfg.set, disk())?;
            let t = t_grid(cfg, GridSpec { start: -10.0, end: 6.0, n: 16001 });
            let fd = fiber_degree(&spec)?;
            let env0 = radial_envelope_oracle(&radial_profile(&w0, &t)?, &set)?;
            let env1 = radial_envelope_oracle(&radial_profile(&w1, &t)?, &set)?;
            let e01 = kappa_energy_diff(&env0, &env1, 1, fd)?;
            let e10 = kappa_energy_diff(&env1, &env0, 1, fd)?;
            let defect = (e01.value + e10.value).abs();
            Ok(Outcome {
                summary: json!({ "energy": e01 }),
                header: vec!["t", "potential0", "potential1"],
                rows: (0..t.len()).map(|i| vec![t[i], env0.potential[i], env1.potential[i]]).collect(),
                checks: vec![Check::new("antisymmetry", defect <= tol.antisymmetry, format!("{defect:.3e}"))],
                envelope: None,
            })
        }
        Command::Volratio => {
            let spec = config::series(&cfg.series, SeriesSpec::full(1))?;
            let w0 = config::weight(&cfg.weight, Weight::PaperDisk)?;
            let w1 = config::weight(&cfg.weight1, Weight::fubini_study())?;
            let set = config::descriptor(&cfg.set, disk())?;
            let t = t_grid(cfg, GridSpec { start: -10.0, end: 6.0, n: 16001 });
            let k_list = cfg.k_list.clone().unwrap_or_else(|| vec![32, 64, cfg.k_max.unwrap_or(128)]);
            let kappa = fit_growth(&spec, 64)?.kappa;
            let (series, energy) = volume_ratio_limit_check(&spec, &w0, &w1, &set, &k_list, kappa, fiber_degree(&spec)?, &t)?;
            let last = series.rows.last().map_or(f64::NAN, |r| r.normalized);
            let gap = (last - energy.value).abs();
            Ok(Outcome {
                summary: json!({ "series": series, "energy": energy }),
                header: vec!["k", "log_ratio", "normalized"],
                rows: series.rows.iter().map(|r| vec![r.k as f64, r.log_ratio, r.normalized]).collect(),
                checks: vec![Check::new(
                    "energy-limit",
                    gap <= tol.energy,
                    format!("normalized {last:.6} vs energy {:.6}", energy.value),
                )],
                envelope: None,
            })
        }
        Command::Derivative => {
            let spec = config::series(&cfg.series, SeriesSpec::pullback(SeriesSpec::full(1), linser_core::geometry::SpaceModel::product())?)?;
            let w = config::weight(&cfg.weight, Weight::fubini_study())?;
            let dir = config::direction(&cfg.direction, Direction::Oscillating { base: Box::new(Direction::Constant { value: 1.0 }) })?;
            let set = config::descriptor(&cfg.set, sphere())?;
            let t = t_grid(cfg, GridSpec { start: -10.0, end: 6.0, n: 16001 });
            let fam = WeightFamily::new(w, dir)?;
            let scan = energy_derivative_scan(&spec, &fam, &set, &t, 1, fiber_degree(&spec)?)?;
            let detail = format!("slope- {:.6}, slope+ {:.6}, predicted {:.6}", scan.slope_minus, scan.slope_plus, scan.predicted);
            let checks = if scan.pulled_back {
                vec![
                    Check::new("smooth", scan.kink() <= tol.smooth_ratio * scan.slope_plus.abs(), detail.clone()),
                    Check::new(
                        "slope-matches-equilibrium",
                        (scan.slope_plus - scan.predicted).abs() <= tol.slope_relative * scan.predicted.abs(),
                        detail,
                    ),
                ]
            } else {
                vec![Check::new("kink", scan.kink() >= tol.kink_ratio * scan.slope_plus.abs(), detail)]
            };
            Ok(Outcome {
                summary: json!({ "scan": scan }),
                header: vec!["t", "energy"],
                rows: scan.rows.iter().map(|(s, e)| vec![*s, *e]).collect(),
                checks,
                envelope: None,
            })
        }
        Command::Counterexample => {
            let w = config::weight(&cfg.weight, Weight::PaperDisk)?;
            let k_max = cfg.k_max.unwrap_or(96);
            let search = AnnuliSearch { k_budget: k_max, ..AnnuliSearch::default() };
            let plan = find_annuli(&w, cfg.annuli.unwrap_or(2), &search)?;
            let built = build_counterexample(&plan, &w, k_max)?;
            let mut ks = plan.levels.clone();
            ks.push(k_max);
            ks.dedup();
            let f = Direction::ComponentIndicator { component: 0 };
            let div = divergence_scan(&built, &f, &ks)?;
            let k_list = cfg.k_list.clone().unwrap_or_else(|| vec![k_max / 8, k_max / 4, k_max / 2, k_max]);
            let rescue = pushforward_rescue(&built, &k_list)?;
            let mut rows: Vec<Vec<f64>> = div.rows.iter().map(|(k, v)| vec![*k as f64, *v, f64::NAN]).collect();
            rows.extend(rescue.rows.iter().map(|r| vec![r.k as f64, f64::NAN, r.discrepancy]));
            Ok(Outcome {
                summary: json!({ "plan": plan, "divergence": div, "rescue": rescue }),
                header: vec!["k", "component_mass", "pushed_discrepancy"],
                rows,
                checks: vec![
                    Check::new(
                        "oscillation",
                        div.amplitude >= tol.amplitude && plan.shortfall == 0,
                        format!("amplitude {:.6}", div.amplitude),
                    ),
                    Check::new(
                        "rescue",
                        rescue.final_discrepancy <= tol.rescue,
                        format!("discrepancy {:.6} at k = {}", rescue.final_discrepancy, k_list.last().unwrap_or(&0)),
                    ),
                ],
                envelope: None,
            })
        }
    }
}

fn zero_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (key, val) in map.iter_mut() {
                if key == "runtime_ms" {
                    *val = json!(0.0);
                } else {
                    zero_timings(val);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(zero_timings),
        _ => {}
    }
}

fn write_artifacts(dir: &Path, stem: &str, cfg: &ExperimentConfig, out: &mut Outcome, deterministic: bool) -> Result<(), LabError> {
    fs::create_dir_all(dir)?;
    if deterministic {
        zero_timings(&mut out.summary);
        if let Some(col) = out.header.iter().position(|h| *h == "runtime_ms") {
            out.rows.iter_mut().for_each(|r| r[col] = 0.0);
        }
    }
    let doc = json!({
        "command": cfg.command.name(),
        "result": out.summary,
        "checks": out.checks,
        "pass": out.checks.iter().all(|c| c.pass),
    });
    write_json(&dir.join(format!("{stem}.json")), &doc)?;
    write_csv(&dir.join(format!("{stem}.csv")), &out.header, &out.rows)?;
    if let Some(env) = &out.envelope {
        write_envelope(dir, &format!("{stem}_grid"), env)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.kmax.is_some() {
        cfg.k_max = args.kmax;
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let mut out = match run(&cfg, seed) {
        Ok(o) => o,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let stem = if args.deterministic_names {
        cfg.command.name().to_string()
    } else {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        format!("{}_{secs}", cfg.command.name())
    };
    if let Err(e) = write_artifacts(&args.out, &stem, &cfg, &mut out, args.deterministic_names) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if !args.quiet {
        for c in &out.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            println!("{verdict} {}: {}", c.name, c.detail);
        }
    }
    if out.checks.iter().all(|c| c.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
