//! Experiment configuration files, initial-pose files and measurement CSVs.
//!
//! Configs are TOML documents whose keys are exactly the fields of
//! [`ExperimentConfig`]; unknown keys are rejected. A run manifest written by
//! the CLI is accepted as well: its `[config]` table is used.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterState;
use crate::geom::{Pose, Quaternion, Vec3};
use crate::harness::ExperimentConfig;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, path: &Path, e: toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.message().to_string(),
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    parse_config(&read_text(path)?, path)
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, path, e))?;
    let config: ExperimentConfig = if table.contains_key("tool_version") {
        let Some(inner) = table.get("config").cloned() else {
            return Err(Error::Config(format!(
                "{}: manifest has no [config] table",
                path.display()
            )));
        };
        inner
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?
    } else {
        toml::from_str(text).map_err(|e| toml_error(text, path, e))?
    };
    config.validate()?;
    Ok(config)
}

pub fn config_to_toml(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config is always representable as TOML")
}

/// A fixed starting estimate, e.g. from a vision system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    /// Scalar-first unit quaternion.
    pub rotation: [f64; 4],
    /// Meters.
    pub translation: [f64; 3],
    /// Row-major quaternion covariance; `I4` when absent.
    #[serde(default)]
    pub covariance: Option<[[f64; 4]; 4]>,
}

impl InitialPose {
    pub fn pose(&self) -> Result<Pose> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z).normalize()?;
        let [tx, ty, tz] = self.translation;
        Pose::new(q, Vec3::new(tx, ty, tz))
    }

    pub fn state(&self) -> Result<FilterState> {
        let cov = match self.covariance {
            Some(rows) => Matrix4::from_fn(|i, j| rows[i][j]),
            None => Matrix4::identity(),
        };
        if (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Config("initial covariance is not symmetric".into()));
        }
        if cov.cholesky().is_none() {
            return Err(Error::Config("initial covariance is not positive definite".into()));
        }
        Ok(FilterState::new(self.pose()?.rotation, cov))
    }
}

pub fn load_initial_pose(path: impl AsRef<Path>) -> Result<InitialPose> {
    let path = path.as_ref();
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| toml_error(&text, path, e))
}

/// Reads `x,y,z` rows in meters. Blank lines and `#` comments are skipped,
/// and a leading `x,y,z` header is allowed.
pub fn load_measurements(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    let path = path.as_ref();
    parse_measurements(&read_text(path)?, path)
}

pub fn parse_measurements(text: &str, path: &Path) -> Result<Vec<Vec3>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.iter().map(str::to_ascii_lowercase).eq(["x", "y", "z"]) {
            continue;
        }
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let mut xyz = [0.0; 3];
        for (k, field) in record.iter().enumerate() {
            xyz[k] = match field.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return Err(err(line, format!("invalid coordinate {field:?}"))),
            };
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    if points.is_empty() {
        return Err(Error::Empty("measurement file"));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Strategy;

    fn p() -> &'static Path {
        Path::new("test.toml")
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c = parse_config("strategy = \"random\"\nn_trials = 7\n[filter]\nrho = 0.5\n", p()).unwrap();
        assert_eq!(c.strategy, Strategy::Random);
        assert_eq!(c.n_trials, 7);
        assert_eq!(c.filter.rho, 0.5);
        assert_eq!(c.noise_sigma, ExperimentConfig::default().noise_sigma);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = parse_config("n_trials = 3\nnoise_sigmaa = 0.1\n", p()).unwrap_err();
        match e {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("noise_sigmaa"), "{msg}");
            }
            e => panic!("{e:?}"),
        }
        assert!(parse_config("[filter]\nepsx = 1\n", p()).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(parse_config("n_trials = 0\n", p()), Err(Error::Config(_))));
        assert!(matches!(parse_config("faces = 4\n", p()), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_and_manifest() {
        let c = ExperimentConfig {
            n_trials: 3,
            master_seed: 99,
            ..Default::default()
        };
        let text = config_to_toml(&c);
        assert_eq!(parse_config(&text, p()).unwrap(), c);
        let manifest = format!("tool_version = \"0\"\ncommand = \"compare\"\n\n[config]\n{text}");
        assert_eq!(parse_config(&manifest, p()).unwrap(), c);
    }

    #[test]
    fn measurements_csv() {
        let text = "x,y,z\n# comment\n0.1, 0.2, 0.3\n\n-1e-3,0,2\n";
        let pts = parse_measurements(text, p()).unwrap();
        assert_eq!(pts, vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1e-3, 0.0, 2.0)]);
    }

    #[test]
    fn malformed_measurements_name_the_line() {
        for (text, want) in [("0,0,0\n1,2\n", 2), ("0,0,0\n0,0,0\n1,a,3\n", 3), ("x,y,z\n1,2,3,4\n", 2)] {
            match parse_measurements(text, p()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                r => panic!("{text:?}: {r:?}"),
            }
        }
        assert!(matches!(parse_measurements("x,y,z\n", p()), Err(Error::Empty(_))));
    }

    #[test]
    fn initial_pose_file() {
        let ip: InitialPose = toml::from_str("rotation = [2.0, 0.0, 0.0, 0.0]\ntranslation = [0.0, 0.1, 0.0]\n").unwrap();
        let pose = ip.pose().unwrap();
        assert_eq!(pose.rotation, Quaternion::IDENTITY);
        assert_eq!(ip.state().unwrap().cov, Matrix4::identity());
        let bad = InitialPose {
            covariance: Some([[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]),
            ..ip
        };
        assert!(bad.state().is_err());
    }
}
