//! Durable experiment state.
//!
//! A checkpoint is a single JSON document holding the policy, its regression
//! state, and the monitor mid-experiment. Every float is written with 17
//! significant digits, which (together with the parser's exact float mode)
//! makes save/load an identity on `f64` bits: a resumed run produces
//! byte-identical decisions to one that never stopped.
//!
//! JSON has no literal for non-finite numbers, and the serializer emits
//! `null` for them before any formatter runs. Fields that can legitimately
//! hold `inf` (degenerate-stage boundaries, zero-variance likelihood ratios)
//! therefore use [`portable_float`], which falls back to the strings
//! `"inf"`, `"-inf"` and `"nan"`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::driver::AnyMonitor;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::stream::ArmState;

/// Format version accepted by [`Checkpoint::load`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact-width serde codec for `f64` fields that may be non-finite.
///
/// Finite values pass through as numbers; `inf`, `-inf` and `nan` become
/// strings and are restored verbatim. Apply with
/// `#[serde(with = "crate::checkpoint::portable_float")]`.
pub mod portable_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if value.is_finite() {
            ser.serialize_f64(*value)
        } else if value.is_nan() {
            ser.serialize_str("nan")
        } else if *value > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(tag) => match tag.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "unknown float tag {other:?}"
                ))),
            },
        }
    }
}

/// JSON formatter that writes every finite `f64` as `{:.16e}`.
///
/// 17 significant decimal digits identify every double uniquely, so the
/// printed text reparses to the original bits. Non-finite values never reach
/// a formatter (see module docs).
#[derive(Clone, Copy, Debug, Default)]
pub struct Decimal17;

impl serde_json::ser::Formatter for Decimal17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes any value as a Decimal17 JSON string.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Decimal17);
    value.serialize(&mut ser).map_err(json_err)?;
    // Decimal17 only ever writes UTF-8.
    Ok(String::from_utf8(buf).expect("serializer produced invalid UTF-8"))
}

fn json_err(e: serde_json::Error) -> Error {
    if e.is_io() {
        Error::Io(e.into())
    } else {
        Error::Checkpoint(e.to_string())
    }
}

/// Complete state of a live experiment between batches.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Seed the experiment was keyed with; assignment draws continue from it.
    pub seed: u64,
    pub policy: Policy,
    pub basis: BasisSpec,
    /// Regression state backing adaptive assignment (separate from any
    /// regression inside the monitor, which sees data only at stage ends).
    pub policy_state: ArmState,
    pub monitor: AnyMonitor,
}

impl Checkpoint {
    pub fn new(
        seed: u64,
        policy: Policy,
        basis: BasisSpec,
        policy_state: ArmState,
        monitor: AnyMonitor,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            policy,
            basis,
            policy_state,
            monitor,
        }
    }

    /// Writes the checkpoint as one JSON document (plus trailing newline).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = io::BufWriter::new(fs::File::create(path)?);
        let mut ser = serde_json::Serializer::with_formatter(&mut writer, Decimal17);
        self.serialize(&mut ser).map_err(json_err)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    /// Reads a checkpoint and rebuilds the derived coefficient caches, which
    /// are not persisted.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        let mut ck: Checkpoint = serde_json::from_slice(&bytes).map_err(json_err)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads version {})",
                ck.version, CHECKPOINT_VERSION
            )));
        }
        ck.policy_state.refresh_coefficients();
        Ok(ck)
    }
}
