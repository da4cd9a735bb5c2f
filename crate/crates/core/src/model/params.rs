use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::numerics::Tensor;

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_owned()
    } else {
        format!("{prefix}.{field}")
    }
}

// Leaf groups: every field is a `T`. Generates name-aware visitors and `map`.
macro_rules! leaf_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T),+
        }

        impl<T> $name<T> {
            pub fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T) -> U) -> $name<U> {
                $name { $($field: f(&join(prefix, stringify!($field)), &self.$field)),+ }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T)) {
                $(f(&join(prefix, stringify!($field)), &self.$field);)+
            }

            pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut T)) {
                $(f(&join(prefix, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

// Composite groups: fields are themselves groups (or vectors of groups).
macro_rules! composite_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident : $kind:ident [$ty:ty]),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: $ty),+
        }

        impl<T> $name<T> {
            pub fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T) -> U) -> $name<U> {
                $name { $($field: composite_group!(@map self.$field, $kind, &join(prefix, stringify!($field)), f)),+ }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T)) {
                $(composite_group!(@visit self.$field, $kind, &join(prefix, stringify!($field)), f);)+
            }

            pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut T)) {
                $(composite_group!(@visit_mut self.$field, $kind, &join(prefix, stringify!($field)), f);)+
            }
        }
    };
    (@map $e:expr, Leaf, $p:expr, $f:ident) => { $f($p, &$e) };
    (@map $e:expr, Encoders, $p:expr, $f:ident) => {
        $e.iter().enumerate().map(|(i, b)| b.map(&format!("{}.{i}", $p), $f)).collect()
    };
    (@map $e:expr, Decoders, $p:expr, $f:ident) => {
        $e.iter().enumerate().map(|(i, b)| b.map(&format!("{}.{i}", $p), $f)).collect()
    };
    (@map $e:expr, $kind:ident, $p:expr, $f:ident) => { $e.map($p, $f) };
    (@visit $e:expr, Leaf, $p:expr, $f:ident) => { $f($p, &$e) };
    (@visit $e:expr, Encoders, $p:expr, $f:ident) => {
        for (i, b) in $e.iter().enumerate() { b.visit(&format!("{}.{i}", $p), $f) }
    };
    (@visit $e:expr, Decoders, $p:expr, $f:ident) => {
        for (i, b) in $e.iter().enumerate() { b.visit(&format!("{}.{i}", $p), $f) }
    };
    (@visit $e:expr, $kind:ident, $p:expr, $f:ident) => { $e.visit($p, $f) };
    (@visit_mut $e:expr, Leaf, $p:expr, $f:ident) => { $f($p, &mut $e) };
    (@visit_mut $e:expr, Encoders, $p:expr, $f:ident) => {
        for (i, b) in $e.iter_mut().enumerate() { b.visit_mut(&format!("{}.{i}", $p), $f) }
    };
    (@visit_mut $e:expr, Decoders, $p:expr, $f:ident) => {
        for (i, b) in $e.iter_mut().enumerate() { b.visit_mut(&format!("{}.{i}", $p), $f) }
    };
    (@visit_mut $e:expr, $kind:ident, $p:expr, $f:ident) => { $e.visit_mut($p, $f) };
}

leaf_group!(
    /// Multi-head attention projections; matrices are `[d, d]`, biases `[d]`.
    Attention { wq, bq, wk, bk, wv, bv, wo, bo }
);
leaf_group!(FeedForward { w1, b1, w2, b2 });
leaf_group!(Norm { gain, bias });

composite_group!(
    /// Pre-norm encoder block.
    EncoderBlock { norm1: Norm [Norm<T>], attn: Attention [Attention<T>], norm2: Norm [Norm<T>], ff: FeedForward [FeedForward<T>] }
);
composite_group!(
    /// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
    DecoderBlock {
        norm1: Norm [Norm<T>],
        self_attn: Attention [Attention<T>],
        norm2: Norm [Norm<T>],
        cross_attn: Attention [Attention<T>],
        norm3: Norm [Norm<T>],
        ff: FeedForward [FeedForward<T>],
    }
);
composite_group!(
    /// The full trainable parameter tree, generic over the leaf type so the same
    /// layout serves stored tensors and tape variables.
    Weights {
        embedding: Leaf [T],
        encoder: Encoders [Vec<EncoderBlock<T>>],
        encoder_norm: Norm [Norm<T>],
        decoder: Decoders [Vec<DecoderBlock<T>>],
        decoder_norm: Norm [Norm<T>],
        out_w: Leaf [T],
        out_b: Leaf [T],
        pgen_w: Leaf [T],
        pgen_b: Leaf [T],
    }
);

fn attention_zeros(d: usize) -> Attention<Tensor> {
    let m = || Tensor::zeros(&[d, d]);
    let b = || Tensor::zeros(&[d]);
    Attention {
        wq: m(),
        bq: b(),
        wk: m(),
        bk: b(),
        wv: m(),
        bv: b(),
        wo: m(),
        bo: b(),
    }
}

fn norm(d: usize) -> Norm<Tensor> {
    Norm {
        gain: Tensor::filled(&[d], 1.0),
        bias: Tensor::zeros(&[d]),
    }
}

fn ff_zeros(d: usize, f: usize) -> FeedForward<Tensor> {
    FeedForward {
        w1: Tensor::zeros(&[d, f]),
        b1: Tensor::zeros(&[f]),
        w2: Tensor::zeros(&[f, d]),
        b2: Tensor::zeros(&[d]),
    }
}

impl Weights<Tensor> {
    /// All matrices zero, layer-norm gains one.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.ff_dim);
        Weights {
            embedding: Tensor::zeros(&[v, d]),
            encoder: (0..cfg.encoder_layers)
                .map(|_| EncoderBlock {
                    norm1: norm(d),
                    attn: attention_zeros(d),
                    norm2: norm(d),
                    ff: ff_zeros(d, f),
                })
                .collect(),
            encoder_norm: norm(d),
            decoder: (0..cfg.decoder_layers)
                .map(|_| DecoderBlock {
                    norm1: norm(d),
                    self_attn: attention_zeros(d),
                    norm2: norm(d),
                    cross_attn: attention_zeros(d),
                    norm3: norm(d),
                    ff: ff_zeros(d, f),
                })
                .collect(),
            decoder_norm: norm(d),
            out_w: Tensor::zeros(&[d, v]),
            out_b: Tensor::zeros(&[v]),
            pgen_w: Tensor::zeros(&[3 * d, 1]),
            pgen_b: Tensor::zeros(&[1]),
        }
    }

    /// Xavier-uniform matrices, small embeddings, zero biases, unit gains.
    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut w = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        w.visit_mut("", &mut |name, t| {
            if name.ends_with("gain") || t.shape().len() != 2 {
                return;
            }
            let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
            let limit = if name == "embedding" {
                (3.0 / fan_out as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            for v in t.data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        });
        w
    }
}

/// Sinusoidal position table `[max_positions, d]`.
pub fn sinusoidal_positions(max_positions: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_positions * d];
    for pos in 0..max_positions {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![max_positions, d], data).expect("positive extents")
}

/// Architecture plus parameter set θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights<Tensor>,
    pub(crate) positions: Tensor,
}

impl ModelParams {
    pub fn new(config: ModelConfig, weights: Weights<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = Weights::zeros(&config);
        let mut shapes = Vec::new();
        expected.visit("", &mut |n, t| shapes.push((n.to_owned(), t.shape().to_vec())));
        let mut i = 0;
        let mut bad = None;
        weights.visit("", &mut |n, t| {
            if shapes.get(i).is_none_or(|(en, es)| en != n || es != t.shape()) && bad.is_none() {
                bad = Some(n.to_owned());
            }
            i += 1;
        });
        if let Some(name) = bad.or_else(|| (i != shapes.len()).then(|| "layer count".to_owned())) {
            return Err(ModelError::Config(format!("parameter {name} does not match config")));
        }
        let positions = sinusoidal_positions(config.max_positions, config.d_model);
        Ok(Self {
            config,
            weights,
            positions,
        })
    }

    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let weights = Weights::random(&config, seed);
        Self::new(config, weights)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.weights.visit("", &mut |n, t| out.push((n.to_owned(), t)));
        out
    }

    /// Mutable parameter tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.weights.visit_mut("", &mut |_, t| out.push(t));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// CRC32 over every parameter's bytes, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        for (name, t) in self.named() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        format!("{:08x}", h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }
}
