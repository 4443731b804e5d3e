//! CSV readers and writers for trajectories, path functionals, pmfs and
//! transition records. Floats are written in Rust's shortest round-trip
//! form.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimate::TransitionRecord;
use crate::kolmogorov::{JointPmfGrid, TruncatedPmf};
use crate::simulate::{PathFunctionals, Trajectory};

fn float(x: f64) -> String {
    format!("{x:?}")
}

/// `time,state,event_kind,event_size`, starting with a `0.0,n0,init,0` row.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "state", "event_kind", "event_size"])?;
    w.write_record([float(0.0), traj.initial_state.to_string(), "init".into(), "0".into()])?;
    for ((t, e), n) in traj.jump_times.iter().zip(&traj.events).zip(traj.states()) {
        w.write_record([float(*t), n.to_string(), e.kind.as_str().into(), e.size.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `time,N,B,D,X`.
pub fn write_functionals<W: Write>(out: W, pf: &PathFunctionals) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "N", "B", "D", "X"])?;
    for k in 0..pf.query_times.len() {
        w.write_record([
            float(pf.query_times[k]),
            pf.population[k].to_string(),
            pf.cumulative_births[k].to_string(),
            pf.cumulative_deaths[k].to_string(),
            float(pf.path_integral[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,n,prob`, with one `t,_deficit,value` row per time after its states.
pub fn write_pmfs<W: Write>(out: W, pmfs: &[TruncatedPmf]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "n", "prob"])?;
    for pmf in pmfs {
        for (n, p) in pmf.states() {
            w.write_record([float(pmf.t), n.to_string(), float(p)])?;
        }
        w.write_record([float(pmf.t), "_deficit".into(), float(pmf.deficit)])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,<axes...>,prob` over the positive cells, e.g. `t,d,b,n,prob`. All
/// grids must share the same axes.
pub fn write_joint<W: Write>(out: W, grids: &[JointPmfGrid]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = grids.first() else {
        return Err(Error::domain("no joint grids to write"));
    };
    let names = first.axis_names();
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    header.push("prob".into());
    w.write_record(&header)?;
    for g in grids {
        if g.axis_names() != names {
            return Err(Error::domain("joint grids have different axes"));
        }
        for (coords, p) in g.entries() {
            let mut row = vec![float(g.t)];
            row.extend(coords.iter().map(|c| c.to_string()));
            row.push(float(p));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `state_before,sojourn`.
pub fn write_records<W: Write>(out: W, records: &[TransitionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state_before", "sojourn"])?;
    for r in records {
        w.write_record([r.state_before.to_string(), float(r.sojourn)])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `state_before,sojourn` rows, validating each record.
pub fn read_records<R: Read>(input: R) -> Result<Vec<TransitionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["state_before", "sojourn"] {
        return Err(Error::Io(format!(
            "expected header state_before,sojourn, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<TransitionRecord>().enumerate() {
        let r = row?;
        r.validate().map_err(|e| Error::domain(format!("record {}: {e}", line + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Rows of `(t, value, defined)` for figure data; undefined values are
/// written as empty cells.
pub fn write_series<W: Write>(out: W, rows: &[(f64, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "value", "defined"])?;
    for (t, v) in rows {
        match v {
            Some(x) => w.write_record([float(*t), float(*x), "true".into()])?,
            None => w.write_record([float(*t), String::new(), "false".into()])?,
        }
    }
    w.flush()?;
    Ok(())
}
