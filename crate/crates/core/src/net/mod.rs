//! Encoder-decoder network providing the image representation f(theta | alpha).
//!
//! Structure, for depth D and base channel count C (doubling per level):
//! one full-resolution conv block, D-1 stride-2 conv blocks for
//! downsampling, then D-1 decoder stages of bilinear 2x upsampling plus a
//! conv block, with encoder features *added* (not concatenated) to the
//! same-resolution decoder features, and a final linear 1-channel conv.
//! Every block is conv + leaky rectifier; there is no normalization and no
//! final activation (nonnegativity is enforced by the reconstruction
//! update, not the network).

pub mod ops;

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::io::atomic_write;
use crate::rng::RngStream;
use ops::{
    bilinear_upsample2, bilinear_upsample2_adjoint, conv_backward, conv_forward, leaky_backward,
    leaky_forward, ConvShape, FeatureMap,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Number of resolution levels; input dims must divide 2^(depth-1).
    pub depth: usize,
    /// Channels at full resolution; doubled at each coarser level.
    pub base_channels: usize,
    /// Square kernel size (odd).
    pub kernel: usize,
    /// Leaky-rectifier slope for negative inputs.
    pub negative_slope: f64,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        // Base width 4 keeps the parameter count below the pixel count for
        // the default 64x64 and 96x96 grids.
        NetConfig {
            depth: 3,
            base_channels: 4,
            kernel: 3,
            negative_slope: 0.1,
            input_channels: 1,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "network depth must be >= 2, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.negative_slope.is_finite()) {
            return Err(Error::InvalidArgument("negative_slope must be finite".into()));
        }
        Ok(())
    }

    fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Layer list in parameter-vector order.
    pub fn layout(&self) -> ParamLayout {
        let mut layers = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: ConvShape, offset: &mut usize| {
            let l = LayerSpec {
                name,
                shape,
                offset: *offset,
            };
            *offset += shape.param_len();
            layers.push(l);
        };
        push(
            "enc0".into(),
            ConvShape {
                c_in: self.input_channels,
                c_out: self.channels_at(0),
                kernel: self.kernel,
                stride: 1,
            },
            &mut offset,
        );
        for level in 1..self.depth {
            push(
                format!("down{level}"),
                ConvShape {
                    c_in: self.channels_at(level - 1),
                    c_out: self.channels_at(level),
                    kernel: self.kernel,
                    stride: 2,
                },
                &mut offset,
            );
        }
        for level in (0..self.depth - 1).rev() {
            push(
                format!("dec{level}"),
                ConvShape {
                    c_in: self.channels_at(level + 1),
                    c_out: self.channels_at(level),
                    kernel: self.kernel,
                    stride: 1,
                },
                &mut offset,
            );
        }
        push(
            "out".into(),
            ConvShape {
                c_in: self.channels_at(0),
                c_out: 1,
                kernel: self.kernel,
                stride: 1,
            },
            &mut offset,
        );
        ParamLayout {
            layers,
            total: offset,
        }
    }
}

/// Closed-form parameter count: sum over convs of k*k*c_in*c_out + c_out.
pub fn count_params(config: &NetConfig) -> usize {
    let k2 = config.kernel * config.kernel;
    let mut total = 0usize;
    let mut per_conv = |c_in: usize, c_out: usize| total += k2 * c_in * c_out + c_out;
    per_conv(config.input_channels, config.base_channels);
    for level in 1..config.depth {
        per_conv(config.channels_at(level - 1), config.channels_at(level));
    }
    for level in (0..config.depth - 1).rev() {
        per_conv(config.channels_at(level + 1), config.channels_at(level));
    }
    per_conv(config.base_channels, 1);
    total
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub shape: ConvShape,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub layers: Vec<LayerSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn slice<'a>(&self, params: &'a [f64], layer: usize) -> &'a [f64] {
        let l = &self.layers[layer];
        &params[l.offset..l.offset + l.shape.param_len()]
    }
}

/// Flat parameter vector plus its layout manifest.
#[derive(Debug, Clone)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

/// He-style initialization adjusted for leaky units: weights are zero-mean
/// normal with variance 2 / (fan_in * (1 + slope^2)); biases zero.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let layout = config.layout();
    let mut data = vec![0.0; layout.total];
    let mut rng = RngStream::derived(seed, "net-init", 0);
    let slope2 = config.negative_slope * config.negative_slope;
    for layer in &layout.layers {
        let fan_in = (layer.shape.kernel * layer.shape.kernel * layer.shape.c_in) as f64;
        let std = (2.0 / (fan_in * (1.0 + slope2))).sqrt();
        for i in 0..layer.shape.weight_len() {
            data[layer.offset + i] = std * rng.normal();
        }
        // Bias entries stay zero.
    }
    Ok(ParamVector { layout, data })
}

/// Network plus its (normalized) input image.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub config: NetConfig,
    pub params: ParamVector,
    input: FeatureMap,
    grid: crate::grid::ImageGrid,
}

struct Tape {
    /// Pre-activation output of each conv in layout order.
    pre: Vec<FeatureMap>,
    /// Input fed to each conv in layout order.
    conv_in: Vec<FeatureMap>,
}

impl NetworkModel {
    /// Builds a model over `alpha`, min-max normalized to [0, 1].
    pub fn new(config: NetConfig, params: ParamVector, alpha: &Image) -> Result<Self> {
        config.validate()?;
        let div = 1usize << (config.depth - 1);
        if alpha.grid.width % div != 0 || alpha.grid.height % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input dims {}x{} must be divisible by 2^(depth-1) = {div}",
                alpha.grid.width, alpha.grid.height
            )));
        }
        if params.data.len() != params.layout.total {
            return Err(Error::LengthMismatch {
                expected: params.layout.total,
                got: params.data.len(),
                context: "parameter vector".into(),
            });
        }
        let normalized = alpha.normalized();
        Ok(NetworkModel {
            config,
            params,
            input: FeatureMap::from_plane(
                alpha.grid.height,
                alpha.grid.width,
                normalized.values,
            ),
            grid: alpha.grid,
        })
    }

    pub fn init(config: NetConfig, alpha: &Image) -> Result<Self> {
        let params = init_params(&config, config.seed)?;
        Self::new(config, params, alpha)
    }

    pub fn grid(&self) -> crate::grid::ImageGrid {
        self.grid
    }

    pub fn n_params(&self) -> usize {
        self.params.layout.total
    }

    fn run_forward(&self, theta: &[f64], skip_scale: f64) -> (FeatureMap, Tape) {
        let cfg = &self.config;
        let layout = &self.params.layout;
        let depth = cfg.depth;
        let slope = cfg.negative_slope;
        let mut pre = Vec::with_capacity(layout.layers.len());
        let mut conv_in = Vec::with_capacity(layout.layers.len());

        // Encoder: full-resolution block then stride-2 blocks.
        let mut encoder = Vec::with_capacity(depth);
        let mut cur = self.input.clone();
        for level in 0..depth {
            let spec = &layout.layers[level];
            let p = conv_forward(&spec.shape, layout.slice(theta, level), &cur);
            let act = leaky_forward(&p, slope);
            conv_in.push(cur);
            pre.push(p);
            encoder.push(act.clone());
            cur = act;
        }

        // Decoder: upsample, conv block, add the encoder feature.
        let mut d = encoder[depth - 1].clone();
        for (i, level) in (0..depth - 1).rev().enumerate() {
            let layer_idx = depth + i;
            let spec = &layout.layers[layer_idx];
            let up = bilinear_upsample2(&d);
            let p = conv_forward(&spec.shape, layout.slice(theta, layer_idx), &up);
            let act = leaky_forward(&p, slope);
            conv_in.push(up);
            pre.push(p);
            let skip = &encoder[level];
            let mut merged = act;
            for (m, s) in merged.data.iter_mut().zip(&skip.data) {
                *m += skip_scale * s;
            }
            d = merged;
        }

        // Final linear conv.
        let out_idx = layout.layers.len() - 1;
        let spec = &layout.layers[out_idx];
        let out = conv_forward(&spec.shape, layout.slice(theta, out_idx), &d);
        conv_in.push(d);
        pre.push(out.clone());
        (out, Tape { pre, conv_in })
    }

    /// f(theta | alpha) for the stored parameters.
    pub fn forward(&self) -> Image {
        self.forward_with(&self.params.data)
    }

    /// f(theta | alpha) for an explicit parameter vector.
    pub fn forward_with(&self, theta: &[f64]) -> Image {
        let (out, _) = self.run_forward(theta, 1.0);
        Image {
            grid: self.grid,
            values: out.data,
        }
    }

    /// Forward pass with the additive skips scaled by `skip_scale`
    /// (0 disables them); used by linearity diagnostics.
    pub fn forward_with_skip_scale(&self, theta: &[f64], skip_scale: f64) -> Image {
        let (out, _) = self.run_forward(theta, skip_scale);
        Image {
            grid: self.grid,
            values: out.data,
        }
    }

    /// Squared-L2 fitting loss sum_j (f_j - target_j)^2 and its exact
    /// gradient w.r.t. every parameter.
    pub fn loss_and_grad(&self, theta: &[f64], target: &Image) -> Result<(f64, Vec<f64>)> {
        if target.grid != self.grid {
            return Err(Error::GridMismatch(format!(
                "loss target grid {:?} vs model grid {:?}",
                target.grid, self.grid
            )));
        }
        let cfg = &self.config;
        let layout = self.params.layout.clone();
        let depth = cfg.depth;
        let slope = cfg.negative_slope;
        let (out, tape) = self.run_forward(theta, 1.0);

        let mut loss = 0.0;
        let mut grad_out = FeatureMap::zeros(1, out.height, out.width);
        for i in 0..out.data.len() {
            let r = out.data[i] - target.values[i];
            loss += r * r;
            grad_out.data[i] = 2.0 * r;
        }

        let mut grad = vec![0.0; layout.total];
        let out_idx = layout.layers.len() - 1;

        // Final conv.
        let (gp, mut g_d) = conv_backward(
            &layout.layers[out_idx].shape,
            layout.slice(theta, out_idx),
            &tape.conv_in[out_idx],
            &grad_out,
        );
        grad[layout.layers[out_idx].offset..layout.layers[out_idx].offset + gp.len()]
            .copy_from_slice(&gp);

        // Decoder stages, finest to coarsest in reverse construction order.
        // Gradients flowing into each encoder feature accumulate here.
        let mut g_encoder: Vec<Option<FeatureMap>> = (0..depth).map(|_| None).collect();
        for (i, level) in (0..depth - 1).rev().enumerate().rev() {
            let layer_idx = depth + i;
            // The merged output was act + skip: the gradient reaches both.
            match &mut g_encoder[level] {
                slot @ None => *slot = Some(g_d.clone()),
                Some(existing) => {
                    for (e, g) in existing.data.iter_mut().zip(&g_d.data) {
                        *e += g;
                    }
                }
            }
            let g_pre = leaky_backward(&tape.pre[layer_idx], &g_d, slope);
            let (gp, g_up) = conv_backward(
                &layout.layers[layer_idx].shape,
                layout.slice(theta, layer_idx),
                &tape.conv_in[layer_idx],
                &g_pre,
            );
            grad[layout.layers[layer_idx].offset..layout.layers[layer_idx].offset + gp.len()]
                .copy_from_slice(&gp);
            g_d = bilinear_upsample2_adjoint(&g_up);
        }

        // g_d now holds the gradient w.r.t. the bottleneck activation.
        match &mut g_encoder[depth - 1] {
            slot @ None => *slot = Some(g_d),
            Some(existing) => {
                for (e, g) in existing.data.iter_mut().zip(&g_d.data) {
                    *e += g;
                }
            }
        }

        // Encoder, coarsest to finest.
        for level in (0..depth).rev() {
            let g_act = g_encoder[level].take().expect("gradient present");
            let g_pre = leaky_backward(&tape.pre[level], &g_act, slope);
            let (gp, g_in) = conv_backward(
                &layout.layers[level].shape,
                layout.slice(theta, level),
                &tape.conv_in[level],
                &g_pre,
            );
            grad[layout.layers[level].offset..layout.layers[level].offset + gp.len()]
                .copy_from_slice(&gp);
            if level > 0 {
                match &mut g_encoder[level - 1] {
                    slot @ None => *slot = Some(g_in),
                    Some(existing) => {
                        for (e, g) in existing.data.iter_mut().zip(&g_in.data) {
                            *e += g;
                        }
                    }
                }
            }
        }

        Ok((loss, grad))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    name: String,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamManifest {
    dtype: String,
    total: usize,
    layers: Vec<ManifestLayer>,
}

/// Save parameters as a raw little-endian f64 array plus a JSON manifest
/// describing each layer's range.
pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(params.data.len() * 8);
    for v in &params.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)?;
    let manifest = ParamManifest {
        dtype: "f64".into(),
        total: params.layout.total,
        layers: params
            .layout
            .layers
            .iter()
            .map(|l| ManifestLayer {
                name: l.name.clone(),
                c_in: l.shape.c_in,
                c_out: l.shape.c_out,
                kernel: l.shape.kernel,
                stride: l.shape.stride,
                offset: l.offset,
                len: l.shape.param_len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    atomic_write(&path.with_extension("json"), &json)
}

/// Load a parameter vector for `config`, checking the manifest layout
/// matches.
pub fn load_params(config: &NetConfig, path: &Path) -> Result<ParamVector> {
    let layout = config.layout();
    let manifest_path = path.with_extension("json");
    let mf_bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ParamManifest =
        serde_json::from_slice(&mf_bytes).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.total != layout.total || manifest.layers.len() != layout.layers.len() {
        return Err(Error::Config(format!(
            "parameter manifest {} does not match the configured network",
            manifest_path.display()
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != layout.total * 8 {
        return Err(Error::LengthMismatch {
            expected: layout.total * 8,
            got: bytes.len(),
            context: format!("{}", path.display()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ParamVector { layout, data })
}
