//! CSV and JSON emission. Files are rendered in memory first and written
//! through a temporary file in the target directory, then renamed.

use std::io::Write;
use std::path::{Path, PathBuf};

use nhlz::integrator::Trajectory;
use nhlz::lattice::LatticeTrajectory;
use serde::Serialize;

use crate::CliError;

pub const TRAJECTORY_HEADER: [&str; 11] = ["t", "re_psi1", "im_psi1", "re_psi2", "im_psi2", "s0", "s1", "s2", "s3", "p1", "p2"];
pub const LATTICE_HEADER: [&str; 4] = ["t", "site", "re", "im"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders rows to CSV bytes.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header.iter().map(|h| h.as_ref())).expect("in-memory write");
        Table { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

pub fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let mut t = Table::new(&TRAJECTORY_HEADER);
    for k in 0..traj.len() {
        let (st, s) = (&traj.states[k], &traj.stokes[k]);
        let row = [
            traj.times[k],
            st.psi1.re,
            st.psi1.im,
            st.psi2.re,
            st.psi2.im,
            s.s0,
            s.s1,
            s.s2,
            s.s3,
            traj.p1[k],
            traj.p2[k],
        ];
        t.row(row.iter().map(|&x| num(x)));
    }
    t.finish()
}

pub fn lattice_csv(run: &LatticeTrajectory) -> Vec<u8> {
    let mut t = Table::new(&LATTICE_HEADER);
    for (time, amps) in run.times.iter().zip(&run.amplitudes) {
        let tt = num(*time);
        for (site, a) in run.site_labels.iter().zip(amps) {
            t.row([tt.clone(), site.to_string(), num(a.re), num(a.im)]);
        }
    }
    t.finish()
}

pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// Files produced by one command, written together once rendering succeeded.
#[derive(Default)]
pub struct Bundle {
    files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        self.files.iter().map(|(name, bytes)| write_atomic(&dir.join(name), bytes)).collect()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nhlz::model::TwoLevelState;
    use num_complex::Complex64;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE, 2.0f64.sqrt()] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
    }

    #[test]
    fn trajectory_header_and_rows() {
        let states = vec![TwoLevelState::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)); 3];
        let traj = Trajectory::from_states(vec![0.0, 0.5, 1.0], states);
        let text = String::from_utf8(trajectory_csv(&traj)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,re_psi1,im_psi1,re_psi2,im_psi2,s0,s1,s2,s3,p1,p2");
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(row.len(), 11);
        assert_eq!(row[5], 1.25);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
