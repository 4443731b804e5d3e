use std::fs;
use std::path::Path;

use gbdp_core::closedform::{constant_pmf_vector, DEFAULT_TOLERANCE};
use gbdp_core::estimate::{estimate_report, extract_records};
use gbdp_core::extinction::{analyze, hitting_time_laplace, transient_extinction};
use gbdp_core::io::{read_records, write_functionals, write_joint, write_pmfs, write_records, write_series, write_trajectory};
use gbdp_core::kolmogorov::{
    p0_curve, point_mass, solve_joint_birth, solve_joint_death, solve_joint_full, solve_parking_joint,
    solve_state_probabilities, JointPmfGrid, ParkingCount, SolveOptions,
};
use gbdp_core::lattice::Backend;
use gbdp_core::moments::{
    constant_moments, immigration_mean, limit_report, linear_moments, parking_limit, parking_means,
    path_integral_moments_constant, MomentReport,
};
use gbdp_core::simulate::{functionals, monte_carlo, simulate_jumps, simulate_trajectory, Functional};
use gbdp_core::{Error, ModelSpec, Result, State, Variant};
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use crate::output::{emit, emit_json};
use crate::{Command, FigureKind, Format, JointKind, PmfMethod, Weight};

/// Intervals per unit time of the `p(0, s)` curve behind immigration means.
const P0_DENSITY: f64 = 100.0;

fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ModelSpec::from_json(&text)
}

fn solve_options(method: PmfMethod, deficit_tol: Option<f64>, max_states: Option<usize>) -> SolveOptions {
    let mut opts = SolveOptions::default();
    if method == PmfMethod::Uniformization {
        opts.window.backend = Backend::Uniformization;
    }
    if let Some(tol) = deficit_tol {
        opts.window.deficit_tolerance = tol;
    }
    if let Some(m) = max_states {
        opts.window.max_states = m;
    }
    opts
}

fn complex_list(v: &[Complex64]) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

fn report_object(r: &MomentReport) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("t".into(), json!(r.t));
    for (k, v) in &r.values {
        m.insert(k.clone(), json!(v));
    }
    m
}

/// One JSON object per line, or a CSV table with the union of keys.
fn emit_records(path: &str, format: Format, rows: &[Map<String, Value>]) -> Result<()> {
    match format {
        Format::Json => emit(path, |w| {
            for row in rows {
                serde_json::to_writer(&mut *w, row).map_err(|e| Error::Io(e.to_string()))?;
                writeln!(w)?;
            }
            Ok(())
        }),
        Format::Csv => {
            let mut keys: Vec<String> = Vec::new();
            for row in rows {
                for k in row.keys() {
                    if !keys.contains(k) {
                        keys.push(k.clone());
                    }
                }
            }
            emit(path, |w| {
                writeln!(w, "{}", keys.join(","))?;
                for row in rows {
                    let cells: Vec<String> = keys
                        .iter()
                        .map(|k| match row.get(k) {
                            Some(Value::Number(n)) => format!("{:?}", n.as_f64().unwrap_or(f64::NAN)),
                            Some(Value::Null) | None => String::new(),
                            Some(other) => other.to_string().replace(',', ";"),
                        })
                        .collect();
                    writeln!(w, "{}", cells.join(","))?;
                }
                Ok(())
            })
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { model, n0, horizon, jumps, seed, times, replications, records, out } => {
            let spec = load_model(&model)?;
            if let Some(m) = replications {
                if times.is_empty() {
                    return Err(Error::domain("--replications needs --t"));
                }
                if jumps.is_some() {
                    return Err(Error::domain("--replications runs to the largest --t, not a jump count"));
                }
                let all = [Functional::N, Functional::B, Functional::D, Functional::X];
                let summary = monte_carlo(&spec, n0, &times, m, &all, |n| n as f64, seed)?;
                let estimates: Map<String, Value> = summary
                    .estimates
                    .iter()
                    .map(|(k, e)| (k.clone(), json!({"mean": e.mean, "variance": e.variance, "std_error": e.std_error})))
                    .collect();
                let covariances: Vec<Value> = summary
                    .covariances
                    .iter()
                    .map(|((a, b), c)| json!({"a": a, "b": b, "value": c.value, "std_error": c.std_error}))
                    .collect();
                return emit_json(
                    &out.output,
                    &json!({"replications": summary.replications, "seed": seed, "estimates": estimates, "covariances": covariances}),
                );
            }
            let traj = match (jumps, horizon) {
                (Some(j), _) => simulate_jumps(&spec, n0, j, seed)?,
                (None, Some(h)) => simulate_trajectory(&spec, n0, h, seed)?,
                (None, None) => return Err(Error::domain("give --horizon or --jumps")),
            };
            if records {
                let recs = extract_records(&traj);
                return emit(&out.output, |w| write_records(w, &recs));
            }
            if times.is_empty() {
                emit(&out.output, |w| write_trajectory(w, &traj))
            } else {
                let pf = functionals(&traj, |n| n as f64, &times)?;
                emit(&out.output, |w| write_functionals(w, &pf))
            }
        }
        Command::Pmf { model, times, n0, method, deficit_tol, max_states, out } => {
            let spec = load_model(&model)?;
            let pmfs = if method == PmfMethod::ClosedForm {
                if n0 != 1 {
                    return Err(Error::domain("the closed-form pmf starts from one individual"));
                }
                times
                    .iter()
                    .map(|&t| constant_pmf_vector(&spec, t, deficit_tol.unwrap_or(DEFAULT_TOLERANCE)))
                    .collect::<Result<Vec<_>>>()?
            } else {
                solve_state_probabilities(&spec, &point_mass(n0), &times, &solve_options(method, deficit_tol, max_states))?
            };
            match out.format.unwrap_or(Format::Csv) {
                Format::Csv => emit(&out.output, |w| write_pmfs(w, &pmfs)),
                Format::Json => emit_json(&out.output, &serde_json::to_value(&pmfs).map_err(|e| Error::Io(e.to_string()))?),
            }
        }
        Command::Joint { model, times, n0, kind, method, deficit_tol, max_states, out } => {
            let spec = load_model(&model)?;
            if method == PmfMethod::ClosedForm {
                return Err(Error::domain("joint laws are solved with --method ode or uniformization"));
            }
            let opts = solve_options(method, deficit_tol, max_states);
            let grids: Vec<JointPmfGrid> = match kind {
                JointKind::Birth => solve_joint_birth(&spec, n0, &times, &opts)?,
                JointKind::Death => solve_joint_death(&spec, n0, &times, &opts)?,
                JointKind::Full => solve_joint_full(&spec, n0, &times, &opts)?,
                JointKind::Arrivals => solve_parking_joint(&spec, ParkingCount::Arrivals, &times, &opts)?,
                JointKind::Departures => solve_parking_joint(&spec, ParkingCount::Departures, &times, &opts)?,
            };
            match out.format.unwrap_or(Format::Csv) {
                Format::Csv => emit(&out.output, |w| write_joint(w, &grids)),
                Format::Json => emit_json(&out.output, &serde_json::to_value(&grids).map_err(|e| Error::Io(e.to_string()))?),
            }
        }
        Command::Moments { model, times, out } => {
            let spec = load_model(&model)?;
            let rows = moment_rows(&spec, &times)?;
            emit_records(&out.output, out.format.unwrap_or(Format::Json), &rows)
        }
        Command::Extinction { model, times, out } => {
            let spec = load_model(&model)?;
            let a = analyze(&spec)?;
            let opts = SolveOptions::default();
            let transient = times
                .iter()
                .map(|&t| Ok(json!({"t": t, "p0": transient_extinction(&spec, t, &opts)?})))
                .collect::<Result<Vec<_>>>()?;
            let mut body = json!({
                "epsilon": a.epsilon,
                "distinct": a.distinct,
                "psi_coeffs": a.psi_coeffs,
                "roots": complex_list(&a.roots),
                "residues": a.residues.as_deref().map_or(Value::Null, complex_list),
                "limits": serde_json::to_value(limit_report(&spec)?).map_err(|e| Error::Io(e.to_string()))?,
            });
            if !transient.is_empty() {
                body["transient"] = Value::Array(transient);
            }
            emit_json(&out.output, &body)
        }
        Command::Laplace { model, k, theta, weight, k_max, out } => {
            let spec = load_model(&model)?;
            let g = |n: State| match weight {
                Weight::One => 1.0,
                Weight::State => n as f64,
            };
            let rows = theta
                .iter()
                .map(|&th| {
                    let mut m = Map::new();
                    m.insert("theta".into(), json!(th));
                    m.insert("value".into(), json!(hitting_time_laplace(&spec, k, th, g, k_max)?));
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            match out.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(
                    &out.output,
                    &json!({"k": k, "weight": format!("{weight:?}").to_lowercase(), "results": rows}),
                ),
                Format::Csv => emit_records(&out.output, Format::Csv, &rows),
            }
        }
        Command::Estimate { input, alpha, out } => {
            let file = fs::File::open(&input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
            let records = read_records(file)?;
            let report = estimate_report(&records, alpha)?;
            let value = serde_json::to_value(report).map_err(|e| Error::Io(e.to_string()))?;
            match out.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(&out.output, &value),
                Format::Csv => emit_records(&out.output, Format::Csv, &[value.as_object().cloned().unwrap_or_default()]),
            }
        }
        Command::Parking { model, times, out } => {
            let spec = load_model(&model)?;
            let rows = parking_rows(&spec, &times)?;
            emit_records(&out.output, out.format.unwrap_or(Format::Json), &rows)
        }
        Command::Figure { kind, model, t_end, points, out } => {
            let spec = load_model(&model)?;
            let rows = figure_series(&spec, kind, t_end, points)?;
            match out.format.unwrap_or(Format::Csv) {
                Format::Csv => emit(&out.output, |w| write_series(w, &rows)),
                Format::Json => emit_json(
                    &out.output,
                    &Value::Array(rows.iter().map(|(t, v)| json!({"t": t, "value": v})).collect()),
                ),
            }
        }
    }
}

fn p0_for(spec: &ModelSpec, end: f64) -> Result<Option<gbdp_core::kolmogorov::P0Curve>> {
    if spec.variant() != Variant::ImmigrationAtZero || !(end > 0.0) {
        return Ok(None);
    }
    let points = ((end * P0_DENSITY).ceil() as usize).max(200);
    Ok(Some(p0_curve(spec, end, points, &SolveOptions::default())?))
}

fn moment_rows(spec: &ModelSpec, times: &[f64]) -> Result<Vec<Map<String, Value>>> {
    let end = times.iter().cloned().fold(0.0, f64::max);
    let curve = p0_for(spec, end)?;
    times
        .iter()
        .map(|&t| match spec.variant() {
            Variant::Linear => Ok(report_object(&linear_moments(spec, t)?)),
            Variant::Constant => {
                let (r, sigma) = constant_moments(spec, t)?;
                let mut m = report_object(&r);
                for (k, v) in path_integral_moments_constant(spec, t)?.values {
                    m.insert(k, json!(v));
                }
                m.insert("sigma_DBN".into(), json!(sigma));
                Ok(m)
            }
            Variant::ImmigrationAtZero | Variant::ImmigrationEverywhere => {
                let mut m = Map::new();
                m.insert("t".into(), json!(t));
                m.insert("mean_N".into(), json!(immigration_mean(spec, t, curve.as_ref())?));
                Ok(m)
            }
            Variant::Parking => Ok(parking_rows(spec, &[t])?.remove(0)),
            Variant::GeneralTable => Err(Error::Unsupported("closed-form moments need a parametric model".into())),
        })
        .collect()
}

fn parking_rows(spec: &ModelSpec, times: &[f64]) -> Result<Vec<Map<String, Value>>> {
    let limit = parking_limit(spec)?;
    times
        .iter()
        .map(|&t| {
            let p = parking_means(spec, t)?;
            let mut m = Map::new();
            m.insert("t".into(), json!(t));
            m.insert("mean_N".into(), json!(p.parked));
            m.insert("mean_A".into(), json!(p.arrivals));
            m.insert("mean_D".into(), json!(p.departures));
            m.insert("occupancy".into(), json!(p.occupancy));
            m.insert("long_run_N".into(), json!(limit));
            Ok(m)
        })
        .collect()
}

fn figure_series(spec: &ModelSpec, kind: FigureKind, t_end: f64, points: usize) -> Result<Vec<(f64, Option<f64>)>> {
    if !(t_end > 0.0) || !t_end.is_finite() || points == 0 {
        return Err(Error::domain("figure needs a positive --t-end and at least one interval"));
    }
    let grid: Vec<f64> = (0..=points).map(|k| t_end * k as f64 / points as f64).collect();
    if kind == FigureKind::ImmigrationMean {
        let curve = p0_for(spec, t_end)?;
        return grid
            .iter()
            .map(|&t| Ok((t, Some(immigration_mean(spec, t, curve.as_ref())?))))
            .collect();
    }
    let key = match kind {
        FigureKind::CumBirths => "mean_B",
        FigureKind::CumDeaths => "mean_D",
        FigureKind::CorrBn => "corr_BN",
        FigureKind::CorrDn => "corr_DN",
        FigureKind::CorrNx => "corr_NX",
        FigureKind::ImmigrationMean => unreachable!(),
    };
    grid.iter()
        .map(|&t| {
            let r = match spec.variant() {
                Variant::Constant => {
                    let mut r = constant_moments(spec, t)?.0;
                    r.values.extend(path_integral_moments_constant(spec, t)?.values);
                    r
                }
                _ => linear_moments(spec, t)?,
            };
            Ok((t, r.get(key)))
        })
        .collect()
}
