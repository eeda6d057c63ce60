//! JSON model files. Floats are written in shortest round-trip form, so
//! save followed by load reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureMap, FeatureMapKind, Permutation};
use crate::nn::{Layer, Mlp};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "symfeat-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub dims: Vec<usize>,
    pub use_bias: bool,
    pub feature_map: FeatureMapKind,
    /// Materialised permutation for `PermutationProduct`; checked against the seed on load.
    pub permutation: Option<Permutation>,
    pub permutation_fixed_points: Option<usize>,
    pub layers: Vec<Layer>,
}

impl ModelFile {
    pub fn new(model: &Mlp, map: &FeatureMap) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            dims: model.dims(),
            use_bias: model.has_bias(),
            feature_map: map.kind(),
            permutation: map.permutation().cloned(),
            permutation_fixed_points: map.permutation().map(Permutation::fixed_points),
            layers: model.layers().to_vec(),
        }
    }

    /// Validates the file and rebuilds the network and feature map.
    pub fn into_parts(self) -> Result<(Mlp, FeatureMap)> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Model(format!("unsupported format `{}`", self.format)));
        }
        let map = FeatureMap::with_stored_permutation(self.feature_map, self.permutation)?;
        let mlp = Mlp::from_layers(self.layers)?;
        if mlp.dims() != self.dims {
            return Err(Error::Model(format!(
                "declared dims {:?} disagree with layers {:?}",
                self.dims,
                mlp.dims()
            )));
        }
        if mlp.has_bias() != self.use_bias {
            return Err(Error::Model("declared bias flag disagrees with layers".into()));
        }
        if mlp.input_dim() != map.output_dim() {
            return Err(Error::Model(format!(
                "network expects {} inputs but feature map {} produces {}",
                mlp.input_dim(),
                map.kind(),
                map.output_dim()
            )));
        }
        Ok((mlp, map))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn save_model(model: &Mlp, map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let mut text = ModelFile::new(model, map).to_json()?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Mlp, FeatureMap)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    file.into_parts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_permutation;

    #[test]
    fn round_trip_is_bit_exact() {
        let mlp = Mlp::init(&[64, 10, 5, 10], true, 11).unwrap();
        let map = FeatureMap::new(FeatureMapKind::PermutationProduct { seed: 5 });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&mlp, &map, &path).unwrap();
        let (back, back_map) = load_model(&path).unwrap();
        let bits = |m: &Mlp| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&mlp), bits(&back));
        assert_eq!(map, back_map);
    }

    #[test]
    fn tampered_permutation_is_rejected() {
        let mlp = Mlp::init(&[64, 3, 10], false, 0).unwrap();
        let map = FeatureMap::new(FeatureMapKind::PermutationProduct { seed: 5 });
        let mut file = ModelFile::new(&mlp, &map);
        file.permutation = Some(make_permutation(6));
        assert!(matches!(file.into_parts(), Err(Error::Model(_))));
    }

    #[test]
    fn inconsistent_headers_are_rejected() {
        let mlp = Mlp::init(&[64, 3, 10], false, 0).unwrap();
        let map = FeatureMap::new(FeatureMapKind::Identity);
        let mut file = ModelFile::new(&mlp, &map);
        file.use_bias = true;
        assert!(file.clone().into_parts().is_err());
        file.use_bias = false;
        file.dims = vec![64, 4, 10];
        assert!(file.clone().into_parts().is_err());
        file.dims = vec![64, 3, 10];
        file.format = "other".into();
        assert!(file.into_parts().is_err());

        let narrow = Mlp::init(&[32, 10], false, 0).unwrap();
        assert!(ModelFile::new(&narrow, &map).into_parts().is_err());
    }
}
