//! Observed trajectories `(X_0, a_0), ..., (X_n, a_n)`, their file formats and
//! the affine map onto the unit cube.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Layout;

/// Fewest records a loaded trajectory may contain.
pub const MIN_RECORDS: usize = 4;

/// Relative padding added on each side when bounds are inferred from data.
pub const BOUND_PADDING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(p: &Path) -> Format {
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    x: Vec<f64>,
    a: Vec<f64>,
}

/// A trajectory in its original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub d1: usize,
    pub d2: usize,
    /// Row-major `(n+1) x d1`.
    pub states: Vec<f64>,
    /// Row-major `(n+1) x d2`.
    pub controls: Vec<f64>,
}

impl RawTrajectory {
    pub fn new(d1: usize, d2: usize, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        Layout::new(d1, d2)?;
        if !states.len().is_multiple_of(d1)
            || !controls.len().is_multiple_of(d2)
            || states.len() / d1 != controls.len() / d2
        {
            return Err(Error::DimensionMismatch {
                record: 0,
                detail: format!(
                    "{} state values and {} control values",
                    states.len(),
                    controls.len()
                ),
            });
        }
        let t = RawTrajectory {
            d1,
            d2,
            states,
            controls,
        };
        for i in 0..t.records() {
            if t.state(i)
                .iter()
                .chain(t.control(i))
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteCoordinate { record: i });
            }
        }
        Ok(t)
    }

    pub fn records(&self) -> usize {
        self.states.len() / self.d1
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.d1..(i + 1) * self.d1]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.d2..(i + 1) * self.d2]
    }

    /// Treat the coordinates as already normalized; every record must lie in
    /// the unit cube.
    pub fn into_unit(self) -> Result<Trajectory> {
        Trajectory::from_unit(self.d1, self.d2, self.states, self.controls)
    }
}

/// A trajectory mapped onto the unit cube, with a flag per record telling
/// whether it fell inside the observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub d1: usize,
    pub d2: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    inside: Vec<bool>,
}

impl Trajectory {
    pub fn from_unit(d1: usize, d2: usize, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        let raw = RawTrajectory::new(d1, d2, states, controls)?;
        if raw.records() < 2 {
            return Err(Error::TooFewRecords {
                found: raw.records(),
                needed: 2,
            });
        }
        for i in 0..raw.records() {
            if raw
                .state(i)
                .iter()
                .chain(raw.control(i))
                .any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::PointOutsideDomain(format!(
                    "record {i} is outside the unit cube"
                )));
            }
        }
        let inside = vec![true; raw.records()];
        Ok(Trajectory {
            d1,
            d2,
            states: raw.states,
            controls: raw.controls,
            inside,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            d1: self.d1,
            d2: self.d2,
        }
    }

    /// Number of transitions, including those dropped by the window.
    pub fn n(&self) -> usize {
        self.inside.len() - 1
    }

    pub fn records(&self) -> usize {
        self.inside.len()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.d1..(i + 1) * self.d1]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.d2..(i + 1) * self.d2]
    }

    pub fn is_inside(&self, i: usize) -> bool {
        self.inside[i]
    }

    /// A transition is kept only when both of its endpoints are in the window.
    pub fn retained(&self, i: usize) -> bool {
        self.inside[i] && self.inside[i + 1]
    }

    pub fn retained_count(&self) -> usize {
        (0..self.n()).filter(|&i| self.retained(i)).count()
    }

    /// Product-space point `(X_i, a_i, X_{i+1})`.
    pub fn triple(&self, i: usize) -> Vec<f64> {
        self.layout()
            .join(self.state(i), self.control(i), self.state(i + 1))
    }

    /// State-control point `(X_i, a_i)`.
    pub fn pair(&self, i: usize) -> Vec<f64> {
        let mut p = self.state(i).to_vec();
        p.extend_from_slice(self.control(i));
        p
    }

    /// Indices of the retained transitions.
    pub fn retained_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.retained(i))
    }

    /// Write in the original coordinates given by `map`, or as is.
    pub fn write(&self, path: &Path, format: Format, map: Option<&DomainMap>) -> Result<()> {
        let mut raw = RawTrajectory {
            d1: self.d1,
            d2: self.d2,
            states: self.states.clone(),
            controls: self.controls.clone(),
        };
        if let Some(m) = map {
            for i in 0..raw.records() {
                let mut p = self.pair(i);
                m.to_original(&mut p);
                raw.states[i * self.d1..(i + 1) * self.d1].copy_from_slice(&p[..self.d1]);
                raw.controls[i * self.d2..(i + 1) * self.d2].copy_from_slice(&p[self.d1..]);
            }
        }
        write_trajectory(&raw, path, format)
    }
}

/// Affine map between original coordinates and the unit cube, one interval
/// per state and control axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMap {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainMap {
    pub fn scale(&self, axis: usize) -> f64 {
        1.0 / (self.hi[axis] - self.lo[axis])
    }

    pub fn offset(&self, axis: usize) -> f64 {
        -self.lo[axis] / (self.hi[axis] - self.lo[axis])
    }

    pub fn to_unit(&self, p: &mut [f64]) {
        for (a, v) in p.iter_mut().enumerate() {
            *v = (*v - self.lo[a]) / (self.hi[a] - self.lo[a]);
        }
    }

    pub fn to_original(&self, p: &mut [f64]) {
        for (a, v) in p.iter_mut().enumerate() {
            *v = self.lo[a] + *v * (self.hi[a] - self.lo[a]);
        }
    }
}

/// Map a raw trajectory onto the unit cube.
///
/// With explicit `bounds` (one `(lo, hi)` per state then control axis),
/// records outside them are marked as outside the window. Without bounds the
/// data range padded by one percent per side is used.
pub fn rescale(
    raw: &RawTrajectory,
    bounds: Option<&[(f64, f64)]>,
) -> Result<(Trajectory, DomainMap)> {
    let axes = raw.d1 + raw.d2;
    let records = raw.records();
    if records < 2 {
        return Err(Error::TooFewRecords {
            found: records,
            needed: 2,
        });
    }
    let value = |i: usize, a: usize| {
        if a < raw.d1 {
            raw.state(i)[a]
        } else {
            raw.control(i)[a - raw.d1]
        }
    };
    let map = match bounds {
        Some(b) => {
            if b.len() != axes {
                return Err(Error::DimensionMismatch {
                    record: 0,
                    detail: format!("{} bounds given for {axes} axes", b.len()),
                });
            }
            for (a, &(lo, hi)) in b.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                    return Err(Error::ZeroWidthAxis { axis: a, value: lo });
                }
            }
            DomainMap {
                lo: b.iter().map(|p| p.0).collect(),
                hi: b.iter().map(|p| p.1).collect(),
            }
        }
        None => {
            let mut lo = vec![f64::INFINITY; axes];
            let mut hi = vec![f64::NEG_INFINITY; axes];
            for i in 0..records {
                for a in 0..axes {
                    lo[a] = lo[a].min(value(i, a));
                    hi[a] = hi[a].max(value(i, a));
                }
            }
            for a in 0..axes {
                let w = hi[a] - lo[a];
                if w <= 0.0 {
                    return Err(Error::ZeroWidthAxis {
                        axis: a,
                        value: lo[a],
                    });
                }
                lo[a] -= BOUND_PADDING * w;
                hi[a] += BOUND_PADDING * w;
            }
            DomainMap { lo, hi }
        }
    };
    let mut states = Vec::with_capacity(raw.states.len());
    let mut controls = Vec::with_capacity(raw.controls.len());
    let mut inside = Vec::with_capacity(records);
    for i in 0..records {
        let mut ok = true;
        for a in 0..axes {
            let u = (value(i, a) - map.lo[a]) / (map.hi[a] - map.lo[a]);
            ok &= (0.0..=1.0).contains(&u);
            let u = u.clamp(0.0, 1.0);
            if a < raw.d1 {
                states.push(u);
            } else {
                controls.push(u);
            }
        }
        inside.push(ok);
    }
    Ok((
        Trajectory {
            d1: raw.d1,
            d2: raw.d2,
            states,
            controls,
            inside,
        },
        map,
    ))
}

fn check_record(rec: &Record, idx: usize, dims: &mut Option<(usize, usize)>) -> Result<()> {
    match *dims {
        None => {
            if rec.x.is_empty() || rec.a.is_empty() {
                return Err(Error::DimensionMismatch {
                    record: idx,
                    detail: "empty state or control".into(),
                });
            }
            *dims = Some((rec.x.len(), rec.a.len()));
        }
        Some((d1, d2)) if d1 != rec.x.len() || d2 != rec.a.len() => {
            return Err(Error::DimensionMismatch {
                record: idx,
                detail: format!(
                    "expected {d1} state and {d2} control values, got {} and {}",
                    rec.x.len(),
                    rec.a.len()
                ),
            });
        }
        _ => {}
    }
    if rec.x.iter().chain(&rec.a).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCoordinate { record: idx });
    }
    Ok(())
}

fn collect(records: Vec<Record>, dims: Option<(usize, usize)>) -> Result<RawTrajectory> {
    if records.len() < MIN_RECORDS {
        return Err(Error::TooFewRecords {
            found: records.len(),
            needed: MIN_RECORDS,
        });
    }
    let (d1, d2) = dims.expect("non-empty input has dimensions");
    let states = records.iter().flat_map(|r| r.x.iter().copied()).collect();
    let controls = records.iter().flat_map(|r| r.a.iter().copied()).collect();
    RawTrajectory::new(d1, d2, states, controls)
}

/// Read JSON lines of the form `{"x":[..],"a":[..]}`.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<RawTrajectory> {
    let mut records = Vec::new();
    let mut dims = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let idx = records.len();
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("record {idx}: {e}")))?;
        check_record(&rec, idx, &mut dims)?;
        records.push(rec);
    }
    collect(records, dims)
}

/// Read CSV with header `x0,..,x{d1-1},a0,..,a{d2-1}`.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<RawTrajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let d1 = header.iter().take_while(|h| h.starts_with('x')).count();
    for (j, h) in header.iter().enumerate() {
        let want = if j < d1 {
            format!("x{j}")
        } else {
            format!("a{}", j - d1)
        };
        if h != want {
            return Err(Error::Parse(format!(
                "header column {j} is `{h}`, expected `{want}`"
            )));
        }
    }
    let mut records = Vec::new();
    let mut dims = None;
    for (idx, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::DimensionMismatch {
                record: idx,
                detail: "row length differs from header".into(),
            },
            _ => Error::Csv(e),
        })?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("record {idx}: `{s}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let rec = Record {
            x: vals[..d1].to_vec(),
            a: vals[d1..].to_vec(),
        };
        check_record(&rec, idx, &mut dims)?;
        records.push(rec);
    }
    collect(records, dims)
}

pub fn load_trajectory(path: &Path, format: Format) -> Result<RawTrajectory> {
    let f = std::fs::File::open(path)?;
    match format {
        Format::Jsonl => read_jsonl(std::io::BufReader::new(f)),
        Format::Csv => read_csv(f),
    }
}

pub fn write_trajectory(raw: &RawTrajectory, path: &Path, format: Format) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    match format {
        Format::Jsonl => {
            for i in 0..raw.records() {
                let rec = Record {
                    x: raw.state(i).to_vec(),
                    a: raw.control(i).to_vec(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            let header: Vec<String> = (0..raw.d1)
                .map(|j| format!("x{j}"))
                .chain((0..raw.d2).map(|j| format!("a{j}")))
                .collect();
            cw.write_record(&header)?;
            for i in 0..raw.records() {
                cw.write_record(
                    raw.state(i)
                        .iter()
                        .chain(raw.control(i))
                        .map(|v| format!("{v:?}")),
                )?;
            }
            cw.flush()?;
            return Ok(());
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw4() -> RawTrajectory {
        RawTrajectory::new(1, 1, vec![-2.0, 0.0, 1.0, 2.0], vec![0.0, 0.5, -1.0, 1.5]).unwrap()
    }

    #[test]
    fn explicit_bounds_scale_and_offset() {
        let (t, map) = rescale(&raw4(), Some(&[(-2.0, 2.0), (-2.0, 2.0)])).unwrap();
        assert_eq!(map.scale(0), 0.25);
        assert_eq!(map.offset(0), 0.5);
        assert_eq!(t.state(0), &[0.0]);
        assert_eq!(t.state(3), &[1.0]);
    }

    #[test]
    fn roundtrip_through_map() {
        let raw = raw4();
        let (t, map) = rescale(&raw, None).unwrap();
        for i in 0..raw.records() {
            let mut p = t.pair(i);
            map.to_original(&mut p);
            assert!((p[0] - raw.state(i)[0]).abs() < 1e-12);
            assert!((p[1] - raw.control(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_window_drops_both_transitions() {
        let states = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 5.0, 0.8, 0.9];
        let controls = vec![0.5; 10];
        let raw = RawTrajectory::new(1, 1, states, controls).unwrap();
        let (t, _) = rescale(&raw, Some(&[(0.0, 1.0), (0.0, 1.0)])).unwrap();
        assert_eq!(t.n(), 9);
        assert!(!t.retained(6));
        assert!(!t.retained(7));
        assert!(t.retained(5) && t.retained(8));
        assert_eq!(t.retained_count(), 7);
    }

    #[test]
    fn degenerate_axis() {
        let raw = RawTrajectory::new(1, 1, vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            rescale(&raw, None),
            Err(Error::ZeroWidthAxis { axis: 0, .. })
        ));
    }

    #[test]
    fn jsonl_errors() {
        let ok = "{\"x\":[0.1],\"a\":[0.2]}\n".repeat(4);
        assert_eq!(read_jsonl(ok.as_bytes()).unwrap().records(), 4);
        let short = "{\"x\":[0.1],\"a\":[0.2]}\n".repeat(3);
        assert!(matches!(
            read_jsonl(short.as_bytes()),
            Err(Error::TooFewRecords { found: 3, .. })
        ));
        let bad = format!("{ok}{{\"x\":[0.1,0.2],\"a\":[0.2]}}\n");
        assert!(matches!(
            read_jsonl(bad.as_bytes()),
            Err(Error::DimensionMismatch { record: 4, .. })
        ));
    }

    #[test]
    fn csv_non_finite() {
        let s = "x0,a0\n0.1,0.2\n0.3,NaN\n0.1,0.1\n0.2,0.2\n";
        assert!(matches!(
            read_csv(s.as_bytes()),
            Err(Error::NonFiniteCoordinate { record: 1 })
        ));
        let s = "x0,x1,a0\n0.1,0.2,0.3\n0.1,0.2,0.3\n0.1,0.2,0.3\n0.1,0.2,0.3\n";
        let t = read_csv(s.as_bytes()).unwrap();
        assert_eq!((t.d1, t.d2), (2, 1));
    }

    #[test]
    fn from_unit_rejects_outside_points() {
        assert!(Trajectory::from_unit(1, 1, vec![0.0, 1.2], vec![0.0, 0.0]).is_err());
    }
}
