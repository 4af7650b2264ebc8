//! Full-precision network records.
//!
//! A checkpoint is a JSON document holding the spec, the seed and the
//! parameters. Floats are written shortest-round-trip and parsed exactly, so
//! a save/load cycle reproduces every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::Network;

pub const NETWORK_FORMAT: &str = "dpleak-network/1";

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    format: std::borrow::Cow<'a, str>,
    network: std::borrow::Cow<'a, Network>,
}

pub fn to_json(net: &Network) -> Result<String> {
    Ok(serde_json::to_string(&Record {
        format: NETWORK_FORMAT.into(),
        network: std::borrow::Cow::Borrowed(net),
    })?)
}

pub fn from_json(text: &str) -> Result<Network> {
    let rec: Record<'static> = serde_json::from_str(text)?;
    if rec.format != NETWORK_FORMAT {
        return Err(Error::Format(format!(
            "unknown network format `{}`",
            rec.format
        )));
    }
    let net = rec.network.into_owned();
    // Re-validate the parameter count against the spec.
    Network::from_params(net.spec().clone(), net.seed(), net.params().to_vec())
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
