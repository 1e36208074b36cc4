//! Pluggable feature extractor producing the shared d-dimensional
//! representation both heads consume.
//!
//! Two kinds: `identity` passes tabular vectors straight through;
//! `tiny_cnn` is a small stack of 3x3 stride-2 relu convolutions ending
//! in global average pooling, preserving the conv-stack -> GAP -> vector
//! contract of the full-scale extractor at a testable size.

use rand::Rng as _;

use crate::data::{ImageData, Payload};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Channel-major feature map (C, H, W) used inside the CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    #[inline]
    pub fn add(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] += v;
    }

    pub fn from_image(img: &ImageData) -> Self {
        FeatureMap {
            c: 1,
            h: img.h,
            w: img.w,
            data: img.pixels.clone(),
        }
    }
}

/// out[c] = mean over the spatial grid of map channel c.
pub fn global_average_pool(map: &FeatureMap) -> Result<Vec<f64>> {
    if map.h == 0 || map.w == 0 {
        return Err(Error::InvalidArgument("empty spatial dims in GAP".into()));
    }
    if map.data.len() != map.c * map.h * map.w {
        return Err(Error::DimMismatch {
            context: "gap input",
            expected: map.c * map.h * map.w,
            actual: map.data.len(),
        });
    }
    let area = (map.h * map.w) as f64;
    Ok((0..map.c)
        .map(|c| {
            let start = c * map.h * map.w;
            map.data[start..start + map.h * map.w].iter().sum::<f64>() / area
        })
        .collect())
}

/// 3x3 convolution, stride 2, zero padding 1, relu.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    /// `[out_c][in_c][3][3]` flattened.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;
pub const CONV_PAD: usize = 1;

impl ConvLayer {
    pub fn init(in_c: usize, out_c: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_c * CONV_KERNEL * CONV_KERNEL) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weights = (0..out_c * in_c * CONV_KERNEL * CONV_KERNEL)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        ConvLayer {
            in_c,
            out_c,
            weights,
            bias: vec![0.0; out_c],
        }
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_c + i) * CONV_KERNEL + ky) * CONV_KERNEL + kx]
    }

    pub fn out_size(in_size: usize) -> usize {
        (in_size + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1
    }

    /// Returns (pre-activation, post-relu) maps.
    fn forward(&self, input: &FeatureMap) -> (FeatureMap, FeatureMap) {
        let oh = Self::out_size(input.h);
        let ow = Self::out_size(input.w);
        let mut z = FeatureMap::zeros(self.out_c, oh, ow);
        for o in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_c {
                        for ky in 0..CONV_KERNEL {
                            let iy = (oy * CONV_STRIDE + ky) as isize - CONV_PAD as isize;
                            if iy < 0 || iy as usize >= input.h {
                                continue;
                            }
                            for kx in 0..CONV_KERNEL {
                                let ix = (ox * CONV_STRIDE + kx) as isize - CONV_PAD as isize;
                                if ix < 0 || ix as usize >= input.w {
                                    continue;
                                }
                                acc += self.weight(o, i, ky, kx)
                                    * input.get(i, iy as usize, ix as usize);
                            }
                        }
                    }
                    z.set(o, oy, ox, acc);
                }
            }
        }
        let mut act = z.clone();
        for v in &mut act.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        (z, act)
    }

    /// Backprop through relu + convolution. Accumulates parameter
    /// gradients into `grad` and returns the gradient w.r.t. the input
    /// map.
    fn backward(
        &self,
        input: &FeatureMap,
        z: &FeatureMap,
        upstream: &FeatureMap,
        grad: &mut ConvGradients,
    ) -> FeatureMap {
        let mut d_input = FeatureMap::zeros(input.c, input.h, input.w);
        for o in 0..self.out_c {
            for oy in 0..z.h {
                for ox in 0..z.w {
                    let dz = if z.get(o, oy, ox) > 0.0 {
                        upstream.get(o, oy, ox)
                    } else {
                        0.0
                    };
                    if dz == 0.0 {
                        continue;
                    }
                    grad.d_bias[o] += dz;
                    for i in 0..self.in_c {
                        for ky in 0..CONV_KERNEL {
                            let iy = (oy * CONV_STRIDE + ky) as isize - CONV_PAD as isize;
                            if iy < 0 || iy as usize >= input.h {
                                continue;
                            }
                            for kx in 0..CONV_KERNEL {
                                let ix = (ox * CONV_STRIDE + kx) as isize - CONV_PAD as isize;
                                if ix < 0 || ix as usize >= input.w {
                                    continue;
                                }
                                let widx =
                                    ((o * self.in_c + i) * CONV_KERNEL + ky) * CONV_KERNEL + kx;
                                grad.d_weights[widx] += dz * input.get(i, iy as usize, ix as usize);
                                d_input.add(
                                    i,
                                    iy as usize,
                                    ix as usize,
                                    dz * self.weight(o, i, ky, kx),
                                );
                            }
                        }
                    }
                }
            }
        }
        d_input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    pub in_h: usize,
    pub in_w: usize,
    pub convs: Vec<ConvLayer>,
}

impl TinyCnn {
    /// Builds the conv stack for grayscale `in_h`x`in_w` inputs; the
    /// final channel count is the feature dimension d.
    pub fn init(in_h: usize, in_w: usize, channels: &[usize], rng: &mut Rng) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("tiny_cnn needs conv blocks".into()));
        }
        let mut h = in_h;
        let mut w = in_w;
        let mut in_c = 1;
        let mut convs = Vec::new();
        for &out_c in channels {
            if h < 2 || w < 2 {
                return Err(Error::InvalidArgument(format!(
                    "input {in_h}x{in_w} too small for {} conv blocks",
                    channels.len()
                )));
            }
            convs.push(ConvLayer::init(in_c, out_c, rng));
            h = ConvLayer::out_size(h);
            w = ConvLayer::out_size(w);
            in_c = out_c;
        }
        Ok(TinyCnn { in_h, in_w, convs })
    }

    pub fn output_dim(&self) -> usize {
        self.convs.last().map_or(1, |c| c.out_c)
    }
}

pub struct CnnCache {
    input: FeatureMap,
    /// Pre-activations per conv block.
    zs: Vec<FeatureMap>,
    /// Post-relu activations per conv block.
    acts: Vec<FeatureMap>,
}

#[derive(Debug, Clone)]
pub struct ConvGradients {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

/// Gradients for the extractor parameters; empty for identity.
#[derive(Debug, Clone)]
pub enum ExtractorGradients {
    Identity,
    Cnn(Vec<ConvGradients>),
}

impl ExtractorGradients {
    pub fn zeros_like(e: &Extractor) -> Self {
        match e {
            Extractor::Identity { .. } => ExtractorGradients::Identity,
            Extractor::TinyCnn(cnn) => ExtractorGradients::Cnn(
                cnn.convs
                    .iter()
                    .map(|c| ConvGradients {
                        d_weights: vec![0.0; c.weights.len()],
                        d_bias: vec![0.0; c.bias.len()],
                    })
                    .collect(),
            ),
        }
    }

    pub fn add_scaled(&mut self, other: &ExtractorGradients, scale: f64) {
        match (self, other) {
            (ExtractorGradients::Identity, ExtractorGradients::Identity) => {}
            (ExtractorGradients::Cnn(a), ExtractorGradients::Cnn(b)) => {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter_mut().zip(b) {
                    for (p, q) in x.d_weights.iter_mut().zip(&y.d_weights) {
                        *p += scale * q;
                    }
                    for (p, q) in x.d_bias.iter_mut().zip(&y.d_bias) {
                        *p += scale * q;
                    }
                }
            }
            _ => panic!("mismatched extractor gradient kinds"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ExtractorGradients::Identity => true,
            ExtractorGradients::Cnn(layers) => layers.iter().all(|l| {
                l.d_weights.iter().all(|x| x.is_finite()) && l.d_bias.iter().all(|x| x.is_finite())
            }),
        }
    }

    pub fn grad_slices(&self) -> Vec<&[f64]> {
        match self {
            ExtractorGradients::Identity => Vec::new(),
            ExtractorGradients::Cnn(layers) => layers
                .iter()
                .flat_map(|l| [l.d_weights.as_slice(), l.d_bias.as_slice()])
                .collect(),
        }
    }
}

/// Activation record from [`Extractor::extract_with_cache`].
pub enum ExtractCache {
    Identity,
    Cnn(CnnCache),
}

impl ExtractCache {
    /// Smallest |pre-activation| in the conv stack; infinity for the
    /// identity extractor (which has no kinks).
    pub fn min_abs_preactivation(&self) -> f64 {
        match self {
            ExtractCache::Identity => f64::INFINITY,
            ExtractCache::Cnn(c) => {
                c.zs.iter()
                    .flat_map(|m| m.data.iter())
                    .map(|z| z.abs())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Tabular passthrough: input is already the feature vector.
    Identity {
        dim: usize,
    },
    TinyCnn(TinyCnn),
}

impl Extractor {
    pub fn output_dim(&self) -> usize {
        match self {
            Extractor::Identity { dim } => *dim,
            Extractor::TinyCnn(cnn) => cnn.output_dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Extractor::TinyCnn(_))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Extractor::Identity { .. } => Vec::new(),
            Extractor::TinyCnn(cnn) => cnn
                .convs
                .iter()
                .flat_map(|c| [c.weights.as_slice(), c.bias.as_slice()])
                .collect(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Extractor::Identity { .. } => Vec::new(),
            Extractor::TinyCnn(cnn) => cnn
                .convs
                .iter_mut()
                .flat_map(|c| {
                    let ConvLayer { weights, bias, .. } = c;
                    [weights.as_mut_slice(), bias.as_mut_slice()]
                })
                .collect(),
        }
    }

    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in self.param_slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn check_payload(&self, payload: &Payload) -> Result<()> {
        match (self, payload) {
            (Extractor::Identity { dim }, Payload::Vector(v)) => {
                if v.len() != *dim {
                    return Err(Error::DimMismatch {
                        context: "identity extractor input",
                        expected: *dim,
                        actual: v.len(),
                    });
                }
                Ok(())
            }
            (Extractor::TinyCnn(cnn), Payload::Image(img)) => {
                if (img.h, img.w) != (cnn.in_h, cnn.in_w) {
                    return Err(Error::DimMismatch {
                        context: "cnn extractor input",
                        expected: cnn.in_h * cnn.in_w,
                        actual: img.h * img.w,
                    });
                }
                Ok(())
            }
            (Extractor::Identity { .. }, Payload::Image(_)) => Err(Error::InvalidArgument(
                "identity extractor cannot take image payloads".into(),
            )),
            (Extractor::TinyCnn(_), Payload::Vector(_)) => Err(Error::InvalidArgument(
                "cnn extractor cannot take vector payloads".into(),
            )),
        }
    }

    /// The shared d-dimensional representation.
    pub fn extract(&self, payload: &Payload) -> Result<Vec<f64>> {
        Ok(self.extract_with_cache(payload)?.0)
    }

    pub fn extract_with_cache(&self, payload: &Payload) -> Result<(Vec<f64>, ExtractCache)> {
        self.check_payload(payload)?;
        match (self, payload) {
            (Extractor::Identity { .. }, Payload::Vector(v)) => {
                Ok((v.clone(), ExtractCache::Identity))
            }
            (Extractor::TinyCnn(cnn), Payload::Image(img)) => {
                let input = FeatureMap::from_image(img);
                let mut zs = Vec::with_capacity(cnn.convs.len());
                let mut acts: Vec<FeatureMap> = Vec::with_capacity(cnn.convs.len());
                for (i, conv) in cnn.convs.iter().enumerate() {
                    let src = if i == 0 { &input } else { &acts[i - 1] };
                    let (z, act) = conv.forward(src);
                    zs.push(z);
                    acts.push(act);
                }
                let features = global_average_pool(acts.last().unwrap())?;
                Ok((features, ExtractCache::Cnn(CnnCache { input, zs, acts })))
            }
            _ => unreachable!("checked by check_payload"),
        }
    }

    /// Backpropagates the feature gradient into extractor parameters.
    pub fn backward(&self, cache: &ExtractCache, upstream: &[f64]) -> Result<ExtractorGradients> {
        let mut grads = ExtractorGradients::zeros_like(self);
        self.backward_into(cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating form of [`backward`]; see
    /// [`DenseNet::backward_into`](crate::net::DenseNet::backward_into)
    /// for the batching convention.
    ///
    /// [`backward`]: Extractor::backward
    pub fn backward_into(
        &self,
        cache: &ExtractCache,
        upstream: &[f64],
        grads: &mut ExtractorGradients,
    ) -> Result<()> {
        match (self, cache, grads) {
            (Extractor::Identity { .. }, ExtractCache::Identity, ExtractorGradients::Identity) => {
                Ok(())
            }
            (Extractor::TinyCnn(cnn), ExtractCache::Cnn(c), ExtractorGradients::Cnn(grads)) => {
                if upstream.len() != cnn.output_dim() {
                    return Err(Error::DimMismatch {
                        context: "extractor upstream gradient",
                        expected: cnn.output_dim(),
                        actual: upstream.len(),
                    });
                }
                let last = c.acts.last().unwrap();
                // GAP backward: each spatial cell receives grad / area.
                let area = (last.h * last.w) as f64;
                let mut d_map = FeatureMap::zeros(last.c, last.h, last.w);
                for ch in 0..last.c {
                    let g = upstream[ch] / area;
                    for y in 0..last.h {
                        for x in 0..last.w {
                            d_map.set(ch, y, x, g);
                        }
                    }
                }
                for (i, conv) in cnn.convs.iter().enumerate().rev() {
                    let input = if i == 0 { &c.input } else { &c.acts[i - 1] };
                    d_map = conv.backward(input, &c.zs[i], &d_map, &mut grads[i]);
                }
                Ok(())
            }
            _ => Err(Error::InvalidArgument(
                "extractor cache does not match extractor kind".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_passes_vector_through() {
        let e = Extractor::Identity { dim: 3 };
        let out = e.extract(&Payload::Vector(vec![0.1, -0.2, 0.3])).unwrap();
        assert_eq!(out, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn identity_rejects_wrong_dim() {
        let e = Extractor::Identity { dim: 3 };
        assert!(e.extract(&Payload::Vector(vec![1.0])).is_err());
    }

    #[test]
    fn gap_of_single_cell_map_is_the_map() {
        let map = FeatureMap {
            c: 3,
            h: 1,
            w: 1,
            data: vec![1.0, -2.0, 0.5],
        };
        assert_eq!(global_average_pool(&map).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn gap_of_constant_channel_is_the_constant() {
        let map = FeatureMap {
            c: 1,
            h: 4,
            w: 4,
            data: vec![2.0; 16],
        };
        assert_eq!(global_average_pool(&map).unwrap(), vec![2.0]);
    }

    #[test]
    fn gap_matches_mean_oracle_and_ignores_spatial_order() {
        let mut r = rng::stream(3, "gap");
        use rand::seq::SliceRandom;
        use rand::Rng as _;
        let mut map = FeatureMap::zeros(3, 5, 5);
        for v in &mut map.data {
            *v = r.random_range(-2.0..2.0);
        }
        let got = global_average_pool(&map).unwrap();
        for c in 0..3 {
            let mut sum = 0.0;
            for y in 0..5 {
                for x in 0..5 {
                    sum += map.get(c, y, x);
                }
            }
            assert!((got[c] - sum / 25.0).abs() < 1e-12);
        }
        // Permute each channel's cells: GAP must not change.
        let mut permuted = map.clone();
        for c in 0..3 {
            let start = c * 25;
            permuted.data[start..start + 25].shuffle(&mut r);
        }
        let got2 = global_average_pool(&permuted).unwrap();
        for (a, b) in got.iter().zip(&got2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_rejects_empty_spatial_dims() {
        let map = FeatureMap {
            c: 1,
            h: 0,
            w: 4,
            data: vec![],
        };
        assert!(global_average_pool(&map).is_err());
    }

    fn tiny(seed: u64, h: usize, w: usize, channels: &[usize]) -> Extractor {
        let mut r = rng::stream(seed, "cnn");
        Extractor::TinyCnn(TinyCnn::init(h, w, channels, &mut r).unwrap())
    }

    #[test]
    fn cnn_constant_final_map_gives_constant_gap() {
        // Zero all conv weights, set the last block's bias: the final
        // feature map is constant b per channel, so GAP returns b.
        let mut e = tiny(1, 8, 8, &[2, 3]);
        if let Extractor::TinyCnn(cnn) = &mut e {
            for conv in &mut cnn.convs {
                conv.weights.iter_mut().for_each(|w| *w = 0.0);
            }
            cnn.convs[1].bias = vec![0.5, 1.5, 2.5];
        }
        let img = ImageData::zeros(8, 8);
        let out = e.extract(&Payload::Image(img)).unwrap();
        assert_eq!(out, vec![0.5, 1.5, 2.5]);
    }

    /// Independent direct-convolution oracle: recompute the whole stack
    /// with plain quintuple loops and explicit padding checks.
    fn conv_oracle(cnn: &TinyCnn, img: &ImageData) -> Vec<f64> {
        let mut cur: Vec<Vec<Vec<f64>>> = vec![(0..img.h)
            .map(|y| (0..img.w).map(|x| img.get(y, x)).collect())
            .collect()];
        for conv in &cnn.convs {
            let ih = cur[0].len();
            let iw = cur[0][0].len();
            let oh = (ih + 2 - 3) / 2 + 1;
            let ow = (iw + 2 - 3) / 2 + 1;
            let mut next = vec![vec![vec![0.0; ow]; oh]; conv.out_c];
            for (o, plane) in next.iter_mut().enumerate() {
                for (oy, row) in plane.iter_mut().enumerate() {
                    for (ox, cell) in row.iter_mut().enumerate() {
                        let mut acc = conv.bias[o];
                        for i in 0..conv.in_c {
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iy, ix) = (iy as usize, ix as usize);
                                    if iy >= ih || ix >= iw {
                                        continue;
                                    }
                                    acc += conv.weights[((o * conv.in_c + i) * 3 + ky) * 3 + kx]
                                        * cur[i][iy][ix];
                                }
                            }
                        }
                        *cell = acc.max(0.0);
                    }
                }
            }
            cur = next;
        }
        cur.iter()
            .map(|plane| {
                let total: f64 = plane.iter().flatten().sum();
                total / (plane.len() * plane[0].len()) as f64
            })
            .collect()
    }

    #[test]
    fn cnn_matches_direct_convolution_oracle() {
        let e = tiny(42, 8, 8, &[2, 3]);
        let mut r = rng::stream(77, "cnn-input");
        use rand::Rng as _;
        let pixels: Vec<f64> = (0..64).map(|_| r.random_range(0.0..1.0)).collect();
        let img = ImageData::new(8, 8, pixels).unwrap();
        let got = e.extract(&Payload::Image(img.clone())).unwrap();
        let want = match &e {
            Extractor::TinyCnn(cnn) => conv_oracle(cnn, &img),
            _ => unreachable!(),
        };
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "got {g}, oracle {w}");
        }
    }

    #[test]
    fn cnn_gradients_match_finite_differences() {
        let mut e = tiny(5, 8, 8, &[2, 2]);
        let mut r = rng::stream(6, "cnn-fd");
        use rand::Rng as _;
        let pixels: Vec<f64> = (0..64).map(|_| r.random_range(0.0..1.0)).collect();
        let img = ImageData::new(8, 8, pixels).unwrap();
        let payload = Payload::Image(img);
        let coef: Vec<f64> = (0..e.output_dim())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();

        let loss = |e: &Extractor| -> f64 {
            e.extract(&payload)
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(f, c)| f * c)
                .sum()
        };

        let (_, cache) = e.extract_with_cache(&payload).unwrap();
        let grads = match e.backward(&cache, &coef).unwrap() {
            ExtractorGradients::Cnn(g) => g,
            _ => unreachable!(),
        };

        let h = 1e-6;
        for li in 0..2 {
            for wi in 0..grads[li].d_weights.len() {
                let orig = match &e {
                    Extractor::TinyCnn(c) => c.convs[li].weights[wi],
                    _ => unreachable!(),
                };
                if let Extractor::TinyCnn(c) = &mut e {
                    c.convs[li].weights[wi] = orig + h;
                }
                let plus = loss(&e);
                if let Extractor::TinyCnn(c) = &mut e {
                    c.convs[li].weights[wi] = orig - h;
                }
                let minus = loss(&e);
                if let Extractor::TinyCnn(c) = &mut e {
                    c.convs[li].weights[wi] = orig;
                }
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads[li].d_weights[wi];
                let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "layer {li} w{wi}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn extract_is_deterministic_for_frozen_params() {
        let e = tiny(9, 8, 8, &[2, 3]);
        let img = ImageData::new(8, 8, (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let a = e.extract(&Payload::Image(img.clone())).unwrap();
        let b = e.extract(&Payload::Image(img)).unwrap();
        assert_eq!(a, b);
    }
}
