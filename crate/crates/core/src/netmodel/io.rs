use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Forward, FrozenWideStack, SkipBlockStack, TargetNetwork};
use crate::scalar::Real;

pub const NETWORK_DOC_VERSION: u32 = 1;

/// Any of the three network kinds, tagged by `"kind"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Real")]
pub enum Network<T> {
    Target(TargetNetwork<T>),
    Wide(FrozenWideStack<T>),
    Skip(SkipBlockStack<T>),
}

impl<T: Real> Network<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Network::Target(_) => "target",
            Network::Wide(_) => "wide",
            Network::Skip(_) => "skip",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Network::Target(g) => g.validate(),
            Network::Wide(f) => f.validate(),
            Network::Skip(f) => f.validate(),
        }
    }

    fn inner(&self) -> &dyn Forward<T> {
        match self {
            Network::Target(g) => g,
            Network::Wide(f) => f,
            Network::Skip(f) => f,
        }
    }
}

impl<T: Real> Forward<T> for Network<T> {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }

    fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.inner().forward(x)
    }
}

/// On-disk network: `{"kind", "input_dim", "layers", ..., "seed", "version"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NetworkDoc<T> {
    #[serde(flatten)]
    pub network: Network<T>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub version: u32,
}

impl<T: Real> NetworkDoc<T> {
    pub fn new(network: Network<T>, seed: Option<u64>) -> Self {
        NetworkDoc {
            network,
            seed,
            version: NETWORK_DOC_VERSION,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.check()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        doc.check()?;
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.version != NETWORK_DOC_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported network document version {}",
                self.version
            )));
        }
        self.network.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::sample_target;
    use crate::rng::WeightDist;

    #[test]
    fn target_round_trip() {
        let g: TargetNetwork<f64> = sample_target(3, 2, 4).unwrap();
        let doc = NetworkDoc::new(Network::Target(g), Some(4));
        let text = doc.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["kind"], "target");
        assert_eq!(value["input_dim"], 3);
        assert_eq!(value["version"], 1);
        assert_eq!(value["layers"][0]["weight"]["rows"], 3);
        assert_eq!(NetworkDoc::from_json(&text).unwrap(), doc);
    }

    #[test]
    fn frozen_round_trips() {
        let wide = FrozenWideStack::<f64>::sample(&[2, 4, 2], WeightDist::Uniform, 1).unwrap();
        let skip = SkipBlockStack::<f64>::sample(4, 2, 1, WeightDist::Uniform, 2).unwrap();
        for net in [Network::Wide(wide), Network::Skip(skip)] {
            let doc = NetworkDoc::new(net, None);
            assert_eq!(NetworkDoc::from_json(&doc.to_json().unwrap()).unwrap(), doc);
        }
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let g: TargetNetwork<f64> = sample_target(2, 1, 0).unwrap();
        let mut value = serde_json::to_value(NetworkDoc::new(Network::Target(g), None)).unwrap();
        value["version"] = 2.into();
        assert!(NetworkDoc::<f64>::from_json(&value.to_string()).is_err());
        value["version"] = 1.into();
        value["input_dim"] = 5.into();
        assert!(NetworkDoc::<f64>::from_json(&value.to_string()).is_err());
    }
}
