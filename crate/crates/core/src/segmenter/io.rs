use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::embedding::EmbeddingTable;
use crate::neuralnet::Tensor;

use super::{ModelConfig, SegmenterError, SegmenterModel, SegmenterNetwork};

const MAGIC: &[u8; 5] = b"SEGM\x01";
const CONFIG_FIELDS: [&str; 15] = [
    "l_max",
    "embed_dim",
    "conv_filters",
    "conv1_kernel_h",
    "conv1_kernel_w",
    "conv_kernel_h",
    "conv_kernel_w",
    "pool_h",
    "pool_w",
    "conv_layers",
    "lstm_hidden",
    "mlp_hidden",
    "mlp_layers",
    "dropout_permille",
    "output_size",
];

fn config_ints(c: &ModelConfig) -> [i32; 15] {
    let i = |v: usize| i32::try_from(v).unwrap_or(i32::MAX);
    [
        i(c.l_max),
        i(c.embed_dim),
        i(c.conv_filters),
        i(c.conv1_kernel.0),
        i(c.conv1_kernel.1),
        i(c.conv_kernel.0),
        i(c.conv_kernel.1),
        i(c.pool.0),
        i(c.pool.1),
        i(c.conv_layers),
        i(c.lstm_hidden),
        i(c.mlp_hidden),
        i(c.mlp_layers),
        (c.dropout * 1000.0).round() as i32,
        i(c.output_size()),
    ]
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SegmenterError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(SegmenterError::Format(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, SegmenterError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self, what: &str) -> Result<i32, SegmenterError> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl SegmenterModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = self.network();
        let mut out = MAGIC.to_vec();
        for v in config_ints(net.config()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let params = net.parameters();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            let shape = p.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], embeddings: Arc<EmbeddingTable>) -> Result<Self, SegmenterError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(SegmenterError::Format("bad magic or unsupported version".into()));
        }
        let mut ints = [0i32; 15];
        for (v, name) in ints.iter_mut().zip(CONFIG_FIELDS) {
            *v = r.i32(name)?;
        }
        let mut fields = [0usize; 15];
        for ((f, &v), name) in fields.iter_mut().zip(&ints).zip(CONFIG_FIELDS) {
            *f = usize::try_from(v)
                .map_err(|_| SegmenterError::Format(format!("config field {name} is negative ({v})")))?;
        }
        let config = ModelConfig {
            l_max: fields[0],
            embed_dim: fields[1],
            conv_filters: fields[2],
            conv1_kernel: (fields[3], fields[4]),
            conv_kernel: (fields[5], fields[6]),
            pool: (fields[7], fields[8]),
            conv_layers: fields[9],
            lstm_hidden: fields[10],
            mlp_hidden: fields[11],
            mlp_layers: fields[12],
            dropout: fields[13] as f64 / 1000.0,
        };
        if fields[14] != config.output_size() {
            return Err(SegmenterError::Format(format!(
                "config field output_size is {}, l_max {} implies {}",
                fields[14],
                config.l_max,
                config.output_size()
            )));
        }
        config
            .validate()
            .map_err(|e| SegmenterError::Format(format!("config block: {e}")))?;

        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for t in 0..count {
            let what = format!("tensor {t} header");
            let rank = r.u32(&what)? as usize;
            if rank > 8 {
                return Err(SegmenterError::Format(format!(
                    "tensor {t} has implausible rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&what)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| SegmenterError::Format(format!("tensor {t} shape {shape:?} overflows")))?;
            let raw = r.take(len, &format!("tensor {t} data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(SegmenterError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut network = SegmenterNetwork::new(config, 0)?;
        network.set_parameters(tensors)?;
        SegmenterModel::from_network(network, embeddings)
    }

    /// Writes the model atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), SegmenterError> {
        let io = |source| SegmenterError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path, embeddings: Arc<EmbeddingTable>) -> Result<Self, SegmenterError> {
        let bytes = fs::read(path).map_err(|source| SegmenterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, embeddings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::InferenceConfig;

    fn model() -> SegmenterModel {
        let config = ModelConfig {
            l_max: 10,
            embed_dim: 4,
            conv_filters: 3,
            conv1_kernel: (3, 4),
            lstm_hidden: 2,
            mlp_hidden: 5,
            ..ModelConfig::default()
        };
        let table = EmbeddingTable::random(4, "xyz".chars().collect(), 8, 0.5, 0);
        SegmenterModel::new(config, Arc::new(table), 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.segm");
        m.save(&path).unwrap();
        let back = SegmenterModel::load(&path, m.embeddings().clone()).unwrap();
        assert_eq!(back.network(), m.network());
        assert_eq!(back.to_bytes(), m.to_bytes());
        let cfg = InferenceConfig {
            l_max: 10,
            overlap: 3,
            ..Default::default()
        };
        let text = "xyzzyxxyzyzxyzzzyx";
        assert_eq!(
            back.long_scores(&crate::textcore::despace(text).0, &cfg).unwrap(),
            m.long_scores(&crate::textcore::despace(text).0, &cfg).unwrap()
        );
    }

    #[test]
    fn truncation_is_rejected() {
        let m = model();
        let bytes = m.to_bytes();
        for cut in [0, 3, 5, 20, 64, bytes.len() / 2, bytes.len() - 1] {
            let err = SegmenterModel::from_bytes(&bytes[..cut], m.embeddings().clone()).unwrap_err();
            assert!(matches!(err, SegmenterError::Format(_)), "{cut}: {err}");
        }
    }

    #[test]
    fn errors_name_the_field() {
        let m = model();
        let mut bytes = m.to_bytes();
        // output_size is the last config int.
        let off = 5 + 14 * 4;
        bytes[off..off + 4].copy_from_slice(&7i32.to_le_bytes());
        let msg = SegmenterModel::from_bytes(&bytes, m.embeddings().clone())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("output_size"), "{msg}");

        let mut bytes = m.to_bytes();
        // conv_filters disagrees with the stored tensors.
        bytes[5 + 8..5 + 12].copy_from_slice(&4i32.to_le_bytes());
        let msg = SegmenterModel::from_bytes(&bytes, m.embeddings().clone())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("conv1.weight"), "{msg}");

        let mut bytes = m.to_bytes();
        bytes[4] = 2;
        let msg = SegmenterModel::from_bytes(&bytes, m.embeddings().clone())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("magic"), "{msg}");
    }
}
