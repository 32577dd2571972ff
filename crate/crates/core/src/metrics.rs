//! Closed-loop logs and the comparison metrics computed from them.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerTag {
    Mpc,
    Mampc,
}

impl fmt::Display for ControllerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerTag::Mpc => "mpc",
            ControllerTag::Mampc => "mampc",
        })
    }
}

impl FromStr for ControllerTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mpc" => Ok(ControllerTag::Mpc),
            "mampc" => Ok(ControllerTag::Mampc),
            other => Err(Error::Parse(format!("unknown controller tag {other:?}"))),
        }
    }
}

/// One controller sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub tag: ControllerTag,
    pub reference: DVector<f64>,
    pub output: DVector<f64>,
    pub input: DVector<f64>,
    pub alt_iterations: usize,
    pub objective: f64,
}

/// Per-step record of a closed-loop run, with the configuration that
/// produced it in `header`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub header: Vec<(String, String)>,
    /// Input applied before the first logged step.
    pub u_initial: DVector<f64>,
    pub rows: Vec<LogRow>,
}

impl ClosedLoopLog {
    pub fn new(header: Vec<(String, String)>, u_initial: DVector<f64>) -> Self {
        ClosedLoopLog { header, u_initial, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn inputs(&self) -> usize {
        self.u_initial.len()
    }

    pub fn outputs(&self) -> usize {
        self.rows.first().map_or(0, |r| r.output.len())
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Appends a row; steps must increase and vector sizes must agree.
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::InvalidParameter(format!(
                    "log steps must increase, got {} after {}",
                    row.step, last.step
                )));
            }
            if row.output.len() != last.output.len() || row.reference.len() != last.reference.len() {
                return Err(Error::dim("log row outputs", last.output.len(), row.output.len()));
            }
        }
        if row.input.len() != self.u_initial.len() {
            return Err(Error::dim("log row inputs", self.u_initial.len(), row.input.len()));
        }
        if row.reference.len() != row.output.len() {
            return Err(Error::dim("log row reference", row.output.len(), row.reference.len()));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Input changes of every row, the first taken against `u_initial`.
    pub fn input_changes(&self) -> Vec<DVector<f64>> {
        let mut prev = &self.u_initial;
        self.rows
            .iter()
            .map(|r| {
                let d = &r.input - prev;
                prev = &r.input;
                d
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        for (k, v) in &self.header {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "# u_initial={}", join(&self.u_initial))?;
        let (l, m) = (self.outputs(), self.inputs());
        let mut cols = vec!["step".to_string(), "tag".to_string()];
        cols.extend((1..=l).map(|i| format!("r{i}")));
        cols.extend((1..=l).map(|i| format!("y{i}")));
        cols.extend((1..=m).map(|i| format!("u{i}")));
        cols.push("alt_iterations".into());
        cols.push("objective".into());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&cols)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.tag.to_string()];
            rec.extend(r.reference.iter().map(|x| fmt_number(*x)));
            rec.extend(r.output.iter().map(|x| fmt_number(*x)));
            rec.extend(r.input.iter().map(|x| fmt_number(*x)));
            rec.push(r.alt_iterations.to_string());
            rec.push(fmt_number(r.objective));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut header = Vec::new();
        let mut u_initial = None;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(c) = line.strip_prefix('#') {
                let (k, v) = c
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad log header line {line:?}")))?;
                if k == "u_initial" {
                    u_initial = Some(parse_vector(v)?);
                } else {
                    header.push((k.to_string(), v.to_string()));
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let u_initial = u_initial.ok_or_else(|| Error::Parse("log is missing u_initial".into()))?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let cols = rdr.headers()?.clone();
        let l = cols.iter().filter(|c| c.starts_with('y')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if m != u_initial.len() || cols.len() != 4 + 2 * l + m {
            return Err(Error::Parse(format!("unexpected log columns {cols:?}")));
        }
        let mut log = ClosedLoopLog::new(header, u_initial);
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("column {}: {e}", &cols[i])))
            };
            let slice = |start: usize, n: usize| -> Result<DVector<f64>> {
                Ok(DVector::from_vec((start..start + n).map(num).collect::<Result<Vec<_>>>()?))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse::<usize>().map_err(|e| Error::Parse(format!("column {}: {e}", &cols[i])))
            };
            log.push(LogRow {
                step: int(0)?,
                tag: rec[1].parse()?,
                reference: slice(2, l)?,
                output: slice(2 + l, l)?,
                input: slice(2 + 2 * l, m)?,
                alt_iterations: int(2 + 2 * l + m)?,
                objective: num(3 + 2 * l + m)?,
            })?;
        }
        Ok(log)
    }
}

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| fmt_number(*x)).collect::<Vec<_>>().join(" ")
}

fn parse_vector(s: &str) -> Result<DVector<f64>> {
    let vals = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros removed.
pub fn fmt_number(x: f64) -> String {
    const SIG: usize = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= SIG as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (SIG as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn retained(log: &ClosedLoopLog, drop: usize) -> Result<std::ops::Range<usize>> {
    if drop >= log.len() {
        return Err(Error::EmptyWindow(format!(
            "dropping {drop} of {} logged steps leaves nothing",
            log.len()
        )));
    }
    Ok(drop..log.len())
}

/// Fraction of retained steps whose input change on `channel` exceeds
/// `threshold` in magnitude. The change at the first retained step is
/// taken against the previously applied input.
pub fn sparse_density(log: &ClosedLoopLog, channel: usize, threshold: f64, drop: usize) -> Result<f64> {
    if channel >= log.inputs() {
        return Err(Error::InvalidParameter(format!(
            "channel {channel} out of range for {} inputs",
            log.inputs()
        )));
    }
    let range = retained(log, drop)?;
    let n = range.len();
    let changes = log.input_changes();
    let count = changes[range].iter().filter(|d| d[channel].abs() > threshold).count();
    Ok(count as f64 / n as f64)
}

/// Mean over retained steps of `||y - r||^2`.
pub fn tracking_error(log: &ClosedLoopLog, drop: usize) -> Result<f64> {
    let range = retained(log, drop)?;
    let n = range.len() as f64;
    Ok(log.rows[range]
        .iter()
        .map(|r| (&r.output - &r.reference).norm_squared())
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn log_from(inputs: &[f64], outputs: &[(f64, f64)]) -> ClosedLoopLog {
        let mut log = ClosedLoopLog::new(vec![("plant".into(), "test".into())], dvector![0.0]);
        for (i, (&u, &(y, r))) in inputs.iter().zip(outputs).enumerate() {
            log.push(LogRow {
                step: i,
                tag: ControllerTag::Mampc,
                reference: dvector![r],
                output: dvector![y],
                input: dvector![u],
                alt_iterations: 1,
                objective: 0.0,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn density_counts_large_changes() {
        // changes 0.05, 0.2, 0.3, 0.0
        let log = log_from(&[0.05, 0.25, 0.55, 0.55], &[(0.0, 0.0); 4]);
        assert_eq!(sparse_density(&log, 0, 0.1, 0).unwrap(), 0.5);
    }

    #[test]
    fn first_retained_change_uses_previous_input() {
        let log = log_from(&[0.0, 5.0, 5.0], &[(0.0, 0.0); 3]);
        assert_eq!(sparse_density(&log, 0, 0.1, 1).unwrap(), 0.5);
        assert_eq!(sparse_density(&log, 0, 0.1, 2).unwrap(), 0.0);
    }

    #[test]
    fn constant_input_has_zero_density() {
        let log = log_from(&[0.0; 6], &[(0.0, 0.0); 6]);
        assert_eq!(sparse_density(&log, 0, 0.1, 0).unwrap(), 0.0);
    }

    #[test]
    fn tracking_error_cases() {
        let exact = log_from(&[0.0; 3], &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert_eq!(tracking_error(&exact, 0).unwrap(), 0.0);
        let offset = log_from(&[0.0; 4], &[(1.5, 1.0); 4]);
        assert_eq!(tracking_error(&offset, 0).unwrap(), 0.25);
    }

    #[test]
    fn empty_window_is_an_error() {
        let log = log_from(&[0.0; 3], &[(0.0, 0.0); 3]);
        assert!(matches!(tracking_error(&log, 3), Err(Error::EmptyWindow(_))));
        assert!(matches!(sparse_density(&log, 0, 0.1, 5), Err(Error::EmptyWindow(_))));
        assert!(sparse_density(&log, 1, 0.1, 0).is_err());
    }

    #[test]
    fn rejects_out_of_order_steps() {
        let mut log = log_from(&[0.0; 2], &[(0.0, 0.0); 2]);
        let mut row = log.rows[1].clone();
        row.step = 1;
        assert!(log.push(row).is_err());
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_number(0.0), "0");
        assert_eq!(fmt_number(1.5), "1.5");
        assert_eq!(fmt_number(-2.0), "-2");
        assert_eq!(fmt_number(0.1 + 0.2), "0.3");
        assert_eq!(fmt_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_number(123456.789), "123456.789");
        assert_eq!(fmt_number(1e-7), "1e-07");
        assert_eq!(fmt_number(6.02214076e23), "6.02214076e+23");
        assert_eq!(fmt_number(999999999999.9), "1e+12");
        assert_eq!(fmt_number(0.0001), "0.0001");
    }

    #[test]
    fn csv_round_trip() {
        let log = log_from(&[0.25, 1.0 / 3.0, -7.5], &[(1.0, 2.0), (3.0, 4.0), (5.0, 6e-9)]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# plant=test\n# u_initial=0\nstep,tag,r1,y1,u1,alt_iterations,objective\n"));
        assert!(!text.contains('\r'));
        let back = ClosedLoopLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.header, log.header);
        assert_eq!(back.len(), 3);
        assert!((back.rows[1].input[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(back.rows[2].reference[0], 6e-9);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    proptest! {
        #[test]
        fn density_bounded_and_monotone_in_threshold(
            us in prop::collection::vec(-3.0f64..3.0, 1..40),
            t1 in 0.0f64..2.0,
            dt in 0.0f64..2.0,
        ) {
            let log = log_from(&us, &vec![(0.0, 0.0); us.len()]);
            let a = sparse_density(&log, 0, t1, 0).unwrap();
            let b = sparse_density(&log, 0, t1 + dt, 0).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
        }

        #[test]
        fn tracking_error_matches_direct_sum(
            ys in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            drop in 0usize..10,
        ) {
            let log = log_from(&vec![0.0; ys.len()], &ys);
            let drop = drop.min(ys.len() - 1);
            let direct: f64 = ys[drop..].iter().map(|(y, r)| (y - r) * (y - r)).sum::<f64>() / (ys.len() - drop) as f64;
            prop_assert!((tracking_error(&log, drop).unwrap() - direct).abs() <= 1e-12);
        }
    }
}
