//! Plain-text serialization of discrete instances.
//!
//! Format (versioned header, `#` comments, labeled sections):
//!
//! ```text
//! npiv-instance v1
//! x_support: 0 1 2
//! z_support: 0 1
//! pi_z: 0.5 0.5
//! cond:
//! 0.5 0.5 0
//! 0 0.5 0.5
//! h0: 2 -1 0
//! sigma_z: 0.5 0.5
//! k_x: identity
//! ```
//!
//! `k_x:` is either `identity` or `rows`, in which case `d_x` matrix rows
//! follow. `sigma_z` is optional (default 0.5 per atom).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{NpivError, Result};
use crate::kernels::KernelSpec;
use crate::oracle::{DiscreteInstance, NoiseModel};

const HEADER: &str = "npiv-instance v1";

pub fn write_instance_string(inst: &DiscreteInstance) -> String {
    let mut out = String::new();
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "x_support: {}", join(inst.x_support())).unwrap();
    writeln!(out, "z_support: {}", join(inst.z_support())).unwrap();
    let pi_z: Vec<f64> = inst.pi_z().iter().copied().collect();
    writeln!(out, "pi_z: {}", join(&pi_z)).unwrap();
    writeln!(out, "cond:").unwrap();
    for r in 0..inst.dz() {
        let row: Vec<f64> = inst.operator_t().row(r).iter().copied().collect();
        writeln!(out, "{}", join(&row)).unwrap();
    }
    let h0: Vec<f64> = inst.h0().iter().copied().collect();
    writeln!(out, "h0: {}", join(&h0)).unwrap();
    let NoiseModel::Gaussian { sigma } = inst.noise();
    writeln!(out, "sigma_z: {}", join(sigma)).unwrap();
    let kx = inst.kx();
    if kx == &DMatrix::identity(inst.dx(), inst.dx()) {
        writeln!(out, "k_x: identity").unwrap();
    } else {
        writeln!(out, "k_x: rows").unwrap();
        for r in 0..inst.dx() {
            let row: Vec<f64> = kx.row(r).iter().copied().collect();
            writeln!(out, "{}", join(&row)).unwrap();
        }
    }
    out
}

pub fn write_instance_file(inst: &DiscreteInstance, path: &Path) -> Result<()> {
    std::fs::write(path, write_instance_string(inst)).map_err(|e| NpivError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: String,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        loop {
            let (i, line) = self.iter.next()?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((i + 1, trimmed));
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> NpivError {
        NpivError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

fn parse_floats(lines: &Lines, line_no: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| lines.err(line_no, format!("expected a number, got '{tok}'")))
        })
        .collect()
}

pub fn read_instance_string(text: &str, origin: &str) -> Result<DiscreteInstance> {
    let mut lines = Lines {
        iter: text.lines().enumerate().peekable(),
        path: origin.to_string(),
    };
    let (ln, header) = lines
        .next_content()
        .ok_or_else(|| lines.err(0, "empty instance file"))?;
    if header != HEADER {
        return Err(lines.err(ln, format!("expected header '{HEADER}', got '{header}'")));
    }

    let mut x_support: Option<Vec<f64>> = None;
    let mut z_support: Option<Vec<f64>> = None;
    let mut pi_z: Option<Vec<f64>> = None;
    let mut cond: Option<DMatrix<f64>> = None;
    let mut h0: Option<Vec<f64>> = None;
    let mut sigma: Option<Vec<f64>> = None;
    let mut kx: Option<Option<DMatrix<f64>>> = None;

    while let Some((ln, line)) = lines.next_content() {
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| lines.err(ln, "expected 'key: value'"))?;
        let rest = rest.trim();
        match key.trim() {
            "x_support" => x_support = Some(parse_floats(&lines, ln, rest)?),
            "z_support" => z_support = Some(parse_floats(&lines, ln, rest)?),
            "pi_z" => pi_z = Some(parse_floats(&lines, ln, rest)?),
            "h0" => h0 = Some(parse_floats(&lines, ln, rest)?),
            "sigma_z" => sigma = Some(parse_floats(&lines, ln, rest)?),
            "cond" => {
                let dz = z_support
                    .as_ref()
                    .ok_or_else(|| lines.err(ln, "z_support must precede cond"))?
                    .len();
                let dx = x_support
                    .as_ref()
                    .ok_or_else(|| lines.err(ln, "x_support must precede cond"))?
                    .len();
                let mut rows = Vec::with_capacity(dz);
                for _ in 0..dz {
                    let (rln, row) = lines
                        .next_content()
                        .ok_or_else(|| lines.err(ln, "cond rows truncated"))?;
                    let vals = parse_floats(&lines, rln, row)?;
                    if vals.len() != dx {
                        return Err(
                            lines.err(rln, format!("cond row has {} entries, need {dx}", vals.len()))
                        );
                    }
                    rows.extend(vals);
                }
                cond = Some(DMatrix::from_row_slice(dz, dx, &rows));
            }
            "k_x" => match rest {
                "identity" => kx = Some(None),
                "rows" => {
                    let dx = x_support
                        .as_ref()
                        .ok_or_else(|| lines.err(ln, "x_support must precede k_x"))?
                        .len();
                    let mut rows = Vec::with_capacity(dx);
                    for _ in 0..dx {
                        let (rln, row) = lines
                            .next_content()
                            .ok_or_else(|| lines.err(ln, "k_x rows truncated"))?;
                        let vals = parse_floats(&lines, rln, row)?;
                        if vals.len() != dx {
                            return Err(lines
                                .err(rln, format!("k_x row has {} entries, need {dx}", vals.len())));
                        }
                        rows.extend(vals);
                    }
                    kx = Some(Some(DMatrix::from_row_slice(dx, dx, &rows)));
                }
                other => {
                    return Err(lines.err(ln, format!("k_x must be 'identity' or 'rows', got '{other}'")))
                }
            },
            other => return Err(lines.err(ln, format!("unknown section '{other}'"))),
        }
    }

    let missing = |what: &str| NpivError::Parse {
        path: origin.to_string(),
        line: 0,
        msg: format!("missing required section '{what}'"),
    };
    let x_support = x_support.ok_or_else(|| missing("x_support"))?;
    let z_support = z_support.ok_or_else(|| missing("z_support"))?;
    let pi_z = pi_z.ok_or_else(|| missing("pi_z"))?;
    let cond = cond.ok_or_else(|| missing("cond"))?;
    let h0 = h0.ok_or_else(|| missing("h0"))?;
    let sigma = sigma.unwrap_or_else(|| vec![0.5; z_support.len()]);
    let kernel = match kx.unwrap_or(None) {
        Some(gram) => Some(KernelSpec::precomputed(gram)?),
        None => None,
    };
    DiscreteInstance::new(
        x_support,
        z_support,
        pi_z,
        cond,
        h0,
        NoiseModel::Gaussian { sigma },
        kernel,
    )
}

pub fn read_instance_file(path: &Path) -> Result<DiscreteInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| NpivError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_instance_string(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{reference_instance, saturation_instance};

    #[test]
    fn round_trip_identity_kernel() {
        let inst = reference_instance();
        let text = write_instance_string(&inst);
        let back = read_instance_string(&text, "test").unwrap();
        assert_eq!(back.operator_t(), inst.operator_t());
        assert_eq!(back.h0(), inst.h0());
        assert_eq!(back.pi_z(), inst.pi_z());
        assert_eq!(back.kx(), inst.kx());
    }

    #[test]
    fn round_trip_explicit_kernel() {
        let inst = saturation_instance(6, 0.5, 4.0);
        let text = write_instance_string(&inst);
        assert!(text.contains("k_x: rows"));
        let back = read_instance_string(&text, "test").unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(back.kx()[(i, j)], inst.kx()[(i, j)]);
            }
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "npiv-instance v1\nx_support: 0 1\nz_support: 0\npi_z: 1\ncond:\n0.5 oops\nh0: 1 2\n";
        let err = read_instance_string(bad, "bad.txt").unwrap_err();
        match err {
            NpivError::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected error {other}"),
        }
        let missing = "npiv-instance v1\nx_support: 0 1\n";
        assert!(read_instance_string(missing, "missing.txt").is_err());
        let wrong_header = "something else\n";
        assert!(read_instance_string(wrong_header, "h.txt").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let inst = reference_instance();
        let mut text = String::from("# a comment\n\n");
        text.push_str(&write_instance_string(&inst));
        let back = read_instance_string(&text, "test").unwrap();
        assert_eq!(back.h0(), inst.h0());
    }
}
