use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{KeyValues, RunConfig};
use super::read_text;
use crate::error::{Error, Result};
use crate::pipeline::RegistrationMode;

/// Inputs of a fusion session. Relative paths are resolved against the
/// directory given to [`SessionFile::parse`].
///
/// ```text
/// trus_stack = trus.stack
/// mri_transverse = mri_transverse.stack
/// mri_sagittal = mri_sagittal.stack
/// mri_coronal = mri_coronal.stack
/// mri_volume = mri.hdr
/// trus_volume = trus.hdr          # optional
/// trus_landmarks = trus.landmarks # optional
/// mri_landmarks = mri.centers     # optional
/// seeds = implant.seeds           # optional
/// mode = elastic
/// output_dir = out                # optional
/// config.regularization = 0.1     # any run-config key
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFile {
    pub trus_stack: PathBuf,
    pub mri_stacks: [PathBuf; 3],
    pub mri_volume: PathBuf,
    pub trus_volume: Option<PathBuf>,
    pub trus_landmarks: Option<PathBuf>,
    pub mri_landmarks: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub mode: RegistrationMode,
    pub config: RunConfig,
    pub output_dir: Option<PathBuf>,
}

impl SessionFile {
    /// Parses and checks that every referenced file exists.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut path = |key: &str, required: bool| -> Result<Option<PathBuf>> {
            match kv.take_str(key) {
                None if required => Err(Error::parse(0, format!("missing key `{key}`"))),
                None => Ok(None),
                Some((n, v)) => {
                    let p = base.join(&v);
                    if !p.is_file() {
                        return Err(Error::parse(n, format!("`{key}` refers to missing file {}", p.display())));
                    }
                    Ok(Some(p))
                }
            }
        };
        let trus_stack = path("trus_stack", true)?.unwrap();
        let mri_stacks = [
            path("mri_transverse", true)?.unwrap(),
            path("mri_sagittal", true)?.unwrap(),
            path("mri_coronal", true)?.unwrap(),
        ];
        let mri_volume = path("mri_volume", true)?.unwrap();
        let trus_volume = path("trus_volume", false)?;
        let trus_landmarks = path("trus_landmarks", false)?;
        let mri_landmarks = path("mri_landmarks", false)?;
        let seeds = path("seeds", false)?;
        for vol in std::iter::once(&mri_volume).chain(trus_volume.as_ref()) {
            let raw = super::raw_path_for(vol);
            if !raw.is_file() {
                return Err(Error::parse(0, format!("missing raw volume {}", raw.display())));
            }
        }
        let mode = match kv.take_str("mode") {
            None => RegistrationMode::Elastic,
            Some((n, v)) => v.parse().map_err(|_| Error::parse(n, format!("mode must be rigid|elastic, got `{v}`")))?,
        };
        let output_dir = kv.take_str("output_dir").map(|(_, v)| base.join(v));
        let mut overrides = kv.split_prefix("config.");
        let mut config = RunConfig::default();
        config.apply(&mut overrides)?;
        overrides.finish()?;
        kv.finish()?;
        Ok(Self {
            trus_stack,
            mri_stacks,
            mri_volume,
            trus_volume,
            trus_landmarks,
            mri_landmarks,
            seeds,
            mode,
            config,
            output_dir,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_text(path)?, base)
    }
}

/// Session text referencing the standard file names written by the
/// phantom exporter, relative to its directory.
pub fn standard_session_text(mode: RegistrationMode) -> String {
    let mut out = String::new();
    for (k, v) in [
        ("trus_stack", "trus.stack"),
        ("mri_transverse", "mri_transverse.stack"),
        ("mri_sagittal", "mri_sagittal.stack"),
        ("mri_coronal", "mri_coronal.stack"),
        ("mri_volume", "mri.hdr"),
        ("trus_volume", "trus.hdr"),
        ("trus_landmarks", "trus.landmarks"),
        ("mri_landmarks", "mri.centers"),
        ("seeds", "implant.seeds"),
    ] {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(out, "mode = {mode}");
    out
}
