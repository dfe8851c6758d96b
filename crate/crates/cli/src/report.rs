//! Output artifacts. Floats are written with 17 significant digits, rows end in LF.

use std::fs;
use std::path::{Path, PathBuf};

use delaylqr::plant::Trajectory;
use delaylqr::stability::{LyapunovStack, StabilityVerdict};
use nalgebra::DMatrix;

use crate::error::CliError;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One row of `gains.csv`.
#[derive(Debug, Clone)]
pub struct GainRow {
    pub source: &'static str,
    pub iteration: usize,
    pub gain: DMatrix<f64>,
    pub step: Option<f64>,
    pub residual: Option<f64>,
    pub rank: Option<usize>,
    pub condition: Option<f64>,
    pub radius: Option<f64>,
}

pub struct Writer {
    dir: PathBuf,
    written: Vec<String>,
}

impl Writer {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn csv(&mut self, name: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(e) => CliError::io(&path, e),
            other => CliError::io(&path, std::io::Error::other(format!("{other:?}"))),
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(io)?;
        w.write_record(&header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `source,iteration,k_1_1,..,k_m_n,step,residual,rank,condition,radius`.
    pub fn gains(&mut self, rows: &[GainRow]) -> Result<(), CliError> {
        let (m, n) = rows.first().map_or((0, 0), |r| r.gain.shape());
        let mut header = vec!["source".to_string(), "iteration".to_string()];
        header.extend(entry_names("k", m, n));
        header.extend(["step", "residual", "rank", "condition", "radius"].map(String::from));
        let body = rows
            .iter()
            .map(|r| {
                let mut row = vec![r.source.to_string(), r.iteration.to_string()];
                row.extend(row_major(&r.gain).map(fmt));
                row.push(opt(r.step.map(fmt)));
                row.push(opt(r.residual.map(fmt)));
                row.push(opt(r.rank));
                row.push(opt(r.condition.map(fmt)));
                row.push(opt(r.radius.map(fmt)));
                row
            })
            .collect();
        self.csv("gains.csv", header, body)
    }

    /// `source,p0_1_1,..,pd_n_n`, one row per stack.
    pub fn stacks(&mut self, rows: &[(&'static str, &LyapunovStack)]) -> Result<(), CliError> {
        let Some((_, first)) = rows.first() else {
            return self.csv("p_stack.csv", vec!["source".into()], Vec::new());
        };
        let n = first.dim();
        let mut header = vec!["source".to_string()];
        for i in 0..=first.delay() {
            header.extend(entry_names(&format!("p{i}"), n, n));
        }
        let body = rows
            .iter()
            .map(|(source, stack)| {
                let mut row = vec![source.to_string()];
                for p in &stack.p {
                    row.extend(row_major(p.as_matrix()).map(fmt));
                }
                row
            })
            .collect();
        self.csv("p_stack.csv", header, body)
    }

    /// `rollout,k,x_1..x_n,u_1..u_m,w` with `u` the input acting at `k`;
    /// the final state has no input or noise.
    pub fn trajectories(&mut self, trajs: &[Trajectory]) -> Result<(), CliError> {
        let Some(first) = trajs.first() else {
            return self.csv("trajectory.csv", vec!["rollout".into(), "k".into()], Vec::new());
        };
        let n = first.states[0].len();
        let m = first.inputs[0].len();
        let mut header = vec!["rollout".to_string(), "k".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.push("w".into());
        let mut body = Vec::new();
        for t in trajs {
            let d = t.delay as isize;
            for k in 0..=t.horizon() {
                let mut row = vec![t.rollout.to_string(), k.to_string()];
                row.extend(t.state(k).iter().copied().map(fmt));
                if k < t.horizon() {
                    row.extend(t.input(k as isize - d).iter().copied().map(fmt));
                    row.push(fmt(t.noises[k]));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), m + 1));
                }
                body.push(row);
            }
        }
        self.csv("trajectory.csv", header, body)
    }

    pub fn stability(&mut self, gain: &DMatrix<f64>, verdict: &StabilityVerdict) -> Result<(), CliError> {
        let rows: Vec<String> = (0..gain.nrows())
            .map(|i| format!("[{}]", gain.row(i).iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(", ")))
            .collect();
        let body = format!(
            "gain = [{}]\nspectral_radius = {}\nverdict = {}\n",
            rows.join(", "),
            fmt(verdict.radius),
            if verdict.stabilizing { "stabilizing" } else { "not stabilizing" }
        );
        self.text("stability.txt", &body)
    }

    pub fn summary(&mut self, value: &serde_json::Value) -> Result<(), CliError> {
        let mut body = serde_json::to_string_pretty(value).expect("json value serializes");
        body.push('\n');
        self.text("summary.json", &body)
    }
}

fn entry_names(prefix: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (1..=rows).flat_map(move |i| (1..=cols).map(move |j| format!("{prefix}_{i}_{j}")))
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}
