use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_toml, read_tensor, read_text, to_toml, write_bytes, write_tensor, DType};
use crate::error::{Error, Result};
use crate::mri::Dims;
use crate::network::{Network, NetworkConfig};
use crate::nn::{ParamKind, Params};
use crate::tensor::{ComplexTensor, Rng};
use crate::training::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    kind: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    step: usize,
    learning_rate: f64,
    optimizer_step: u64,
    dims: Dims,
    network: NetworkConfig,
    params: Vec<Entry>,
}

/// Network weights with the optimizer state they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Adam,
    pub step: usize,
}

impl Checkpoint {
    /// Fails unless the stored network was built from `config` and `dims`.
    pub fn check_matches(&self, config: &NetworkConfig, dims: &Dims) -> Result<()> {
        if &self.network.config != config || &self.network.dims != dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} at {:?}, configuration asks for {:?} at {:?}",
                self.network.config, self.network.dims, config, dims
            )));
        }
        Ok(())
    }
}

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Complex => "complex",
        ParamKind::Real => "real",
    }
}

/// `manifest.toml` plus `params/<name>.ctns` and the optimizer moments
/// under `optimizer/m` and `optimizer/v`.
pub fn save_checkpoint(dir: &Path, net: &Network, opt: &Adam, step: usize) -> Result<()> {
    let named = net.named_tensors();
    if named.len() != opt.m.len() || named.len() != opt.v.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameter tensors but {} optimizer slots",
            named.len(),
            opt.m.len()
        )));
    }
    let mut params = Vec::with_capacity(named.len());
    for (i, (name, t, kind)) in named.iter().enumerate() {
        write_tensor(&dir.join("params").join(format!("{name}.ctns")), t, DType::Complex64)?;
        write_tensor(&dir.join("optimizer/m").join(format!("{name}.ctns")), &opt.m[i], DType::Complex64)?;
        write_tensor(&dir.join("optimizer/v").join(format!("{name}.ctns")), &opt.v[i], DType::Complex64)?;
        params.push(Entry {
            name: name.clone(),
            dims: t.dims().to_vec(),
            kind: kind_name(*kind).into(),
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        step,
        learning_rate: opt.lr,
        optimizer_step: opt.step,
        dims: net.dims,
        network: net.config.clone(),
        params,
    };
    write_bytes(&dir.join("manifest.toml"), to_toml(&manifest)?.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.toml");
    let manifest: Manifest = parse_toml(&path, &read_text(&path)?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", manifest.format_version)));
    }
    let mut net = Network::init(manifest.network.clone(), manifest.dims, &mut Rng::new(0))
        .map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
    let expected = net.named_tensors();
    let listed: BTreeMap<&str, &Entry> = manifest.params.iter().map(|e| (e.name.as_str(), e)).collect();
    if listed.len() != expected.len() || manifest.params.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, the configuration has {}",
            manifest.params.len(),
            expected.len()
        )));
    }
    let mut values = BTreeMap::new();
    let mut m = Vec::with_capacity(expected.len());
    let mut v = Vec::with_capacity(expected.len());
    for (name, t, kind) in &expected {
        let entry = listed
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("manifest is missing {name}")))?;
        if entry.dims != t.dims() || entry.kind != kind_name(*kind) {
            return Err(Error::Checkpoint(format!(
                "{name}: stored {} {:?}, expected {} {:?}",
                entry.kind,
                entry.dims,
                kind_name(*kind),
                t.dims()
            )));
        }
        let file = format!("{name}.ctns");
        let load = |sub: &str| -> Result<ComplexTensor> {
            let p = dir.join(sub).join(&file);
            let t = read_tensor(&p)?;
            if t.dims() != entry.dims.as_slice() {
                return Err(Error::Checkpoint(format!("{} has dims {:?}, manifest says {:?}", p.display(), t.dims(), entry.dims)));
            }
            Ok(t)
        };
        values.insert(name.clone(), load("params")?);
        m.push(load("optimizer/m")?);
        v.push(load("optimizer/v")?);
    }
    net.visit_mut("", &mut |name, t, _| {
        if let Some(stored) = values.remove(name) {
            *t = stored;
        }
    });
    Ok(Checkpoint {
        network: net,
        optimizer: Adam {
            lr: manifest.learning_rate,
            step: manifest.optimizer_step,
            m,
            v,
        },
        step: manifest.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::make_dataset;
    use crate::training::{reconstruct, sample_gradient, LossNorm};

    fn dims() -> Dims {
        Dims {
            frames: 4,
            nx: 8,
            ny: 8,
            coils: 2,
        }
    }

    fn trained() -> (Network, Adam) {
        let mut net = Network::init(NetworkConfig::default(), dims(), &mut Rng::new(1)).unwrap();
        let mut opt = Adam::new(&net, 1e-3);
        let s = make_dataset(1, dims(), (2.0, 2.0), 2, 3).unwrap().remove(0);
        let (_, g) = sample_gradient(&net, &s, LossNorm::PerTerm).unwrap();
        opt.step(&mut net, &g).unwrap();
        (net, opt)
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![];
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (net, opt) = trained();
        save_checkpoint(dir.path(), &net, &opt, 7).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.step, 7);
        assert_eq!(ck.network, net);
        assert_eq!(ck.optimizer, opt);
        let s = make_dataset(1, dims(), (3.0, 3.0), 2, 9).unwrap().remove(0);
        assert_eq!(reconstruct(&ck.network, &s).unwrap(), reconstruct(&net, &s).unwrap());
        let again = tempfile::tempdir().unwrap();
        save_checkpoint(again.path(), &ck.network, &ck.optimizer, ck.step).unwrap();
        assert_eq!(tree(dir.path()), tree(again.path()));
        ck.check_matches(&NetworkConfig::default(), &dims()).unwrap();
    }

    #[test]
    fn mismatches_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (net, opt) = trained();
        save_checkpoint(dir.path(), &net, &opt, 1).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        let other = NetworkConfig { iterations: 3, ..NetworkConfig::default() };
        assert!(matches!(ck.check_matches(&other, &dims()), Err(Error::Checkpoint(_))));

        let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        std::fs::write(dir.path().join("manifest.toml"), manifest.replace("iterations = 2", "iterations = 3")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
        std::fs::write(dir.path().join("manifest.toml"), &manifest).unwrap();

        let victim = dir.path().join("params/0.isl.a.ctns");
        std::fs::write(&victim, crate::io::encode_tensor(&ComplexTensor::zeros(&[2]), DType::Complex64).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
        std::fs::remove_file(&victim).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Io { .. })));
    }
}
