//! Argument parsing helpers and the run context (manifest + output files).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deteq::error::Error;
use deteq::model::EvaluationPoint;
use deteq::C64;
use serde_json::{json, Value};

/// Parse a complex literal: `-1+0.5i`, `2i`, `-3`, `i`, `1.5e-2-2e-1i`.
pub fn parse_complex(text: &str) -> Result<C64, Error> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err(Error::InvalidArgument("empty complex literal".into()));
    }
    if let Ok(x) = t.parse::<f64>() {
        return Ok(C64::new(x, 0.0));
    }
    let body = t.strip_suffix(['i', 'I']).ok_or_else(|| {
        Error::InvalidArgument(format!("cannot parse complex literal \"{text}\""))
    })?;
    // split the imaginary coefficient at the last +/- that is not an
    // exponent sign and not the leading sign
    let bytes = body.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        let c = bytes[k] as char;
        if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
            split = Some(k);
            break;
        }
    }
    let (re_str, im_str) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let re: f64 = if re_str.is_empty() {
        0.0
    } else {
        re_str
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse \"{text}\"")))?
    };
    let im: f64 = match im_str {
        "" | "+" => 1.0,
        "-" => -1.0,
        s => s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse \"{text}\"")))?,
    };
    Ok(C64::new(re, im))
}

pub fn parse_points(literals: &[String]) -> Result<Vec<EvaluationPoint>, Error> {
    literals
        .iter()
        .map(|s| EvaluationPoint::new(parse_complex(s)?))
        .collect()
}

/// `start:end:count:im` — evenly spaced real parts at a fixed height.
pub fn parse_z_grid(text: &str) -> Result<Vec<EvaluationPoint>, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "z grid \"{text}\" must be start:end:count:im"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid start \"{}\"", parts[0])))?;
    let end: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid end \"{}\"", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid count \"{}\"", parts[2])))?;
    let im: f64 = parts[3]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid height \"{}\"", parts[3])))?;
    if count < 1 {
        return Err(Error::InvalidArgument("grid count must be >= 1".into()));
    }
    (0..count)
        .map(|k| {
            let t = if count == 1 {
                0.0
            } else {
                k as f64 / (count - 1) as f64
            };
            EvaluationPoint::from_parts(start + t * (end - start), im)
        })
        .collect()
}

/// Seed set: `1..50` (inclusive) or a comma list `1,2,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    if let Some((a, b)) = text.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad seed range \"{text}\"")))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad seed range \"{text}\"")))?;
        if hi < lo {
            return Err(Error::InvalidArgument(format!("empty seed range \"{text}\"")));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad seed \"{s}\"")))
        })
        .collect()
}

pub fn read_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))
}

pub fn complex_json(z: C64) -> Value {
    json!({"re": z.re, "im": z.im})
}

/// Carries the manifest (command echo, version, wall time) and the optional
/// output directory for a run.
pub struct RunContext {
    command: String,
    config: Value,
    out: Option<PathBuf>,
    start: Instant,
}

impl RunContext {
    pub fn new(command: &str, config: Value, out: Option<PathBuf>) -> Result<Self, Error> {
        if let Some(dir) = &out {
            fs::create_dir_all(dir).map_err(|e| {
                Error::InvalidArgument(format!("cannot create {}: {e}", dir.display()))
            })?;
        }
        Ok(RunContext {
            command: command.to_string(),
            config,
            out,
            start: Instant::now(),
        })
    }

    pub fn write_file(&self, name: &str, contents: &str) -> Result<(), Error> {
        if let Some(dir) = &self.out {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| {
                Error::InvalidArgument(format!("cannot write {}: {e}", path.display()))
            })?;
        }
        Ok(())
    }

    /// Write `result.json` and `manifest.json` (when an output directory was
    /// given) and print the combined document to stdout. Wall time lives
    /// only in the manifest, so result files are bit-stable across runs.
    pub fn finish(self, result: Value) -> Result<(), Error> {
        let manifest = json!({
            "command": self.command,
            "config": self.config,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_ms": self.start.elapsed().as_millis() as u64,
        });
        if self.out.is_some() {
            self.write_file(
                "result.json",
                &serde_json::to_string_pretty(&result).expect("serializable"),
            )?;
            self.write_file(
                "manifest.json",
                &serde_json::to_string_pretty(&manifest).expect("serializable"),
            )?;
        }
        let combined = json!({"manifest": manifest, "result": result});
        println!("{}", serde_json::to_string_pretty(&combined).expect("serializable"));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_literals() {
        assert_eq!(parse_complex("-1+0i").unwrap(), C64::new(-1.0, 0.0));
        assert_eq!(parse_complex("-1").unwrap(), C64::new(-1.0, 0.0));
        assert_eq!(parse_complex("2i").unwrap(), C64::new(0.0, 2.0));
        assert_eq!(parse_complex("i").unwrap(), C64::new(0.0, 1.0));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("0.5 - 2i").unwrap(), C64::new(0.5, -2.0));
        assert_eq!(parse_complex("1e-2+3e1i").unwrap(), C64::new(0.01, 30.0));
        assert!(parse_complex("nope").is_err());
    }

    #[test]
    fn seed_sets() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("3,1,9").unwrap(), vec![3, 1, 9]);
        assert!(parse_seeds("5..2").is_err());
    }

    #[test]
    fn z_grids() {
        let g = parse_z_grid("-3:-1:3:0").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].z(), C64::new(-3.0, 0.0));
        assert_eq!(g[2].z(), C64::new(-1.0, 0.0));
        assert!(parse_z_grid("0:1:3:0").is_err()); // grid point on R+
    }
}
