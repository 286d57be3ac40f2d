//! Feature-space adaptation: a small transformation network that rescales
//! and offsets LiDAR features element-wise, conditioned on both streams.

use crate::autodiff::{ConvLayer, Graph, ParamBinding, ParameterStore, TensorError, Var};

/// One adaptation module: exactly three 1x1 convolutions.
///
/// `proj` lifts the thin LiDAR features to the visual width; the two heads
/// read the concatenated visual and lifted LiDAR features and emit the
/// per-element scale `alpha` and offset `beta`. The adapted feature is
/// `alpha (*) proj(f_lidar) + beta`.
#[derive(Debug, Clone)]
pub struct FsaModule {
    pub proj: ConvLayer,
    pub alpha_head: ConvLayer,
    pub beta_head: ConvLayer,
}

impl FsaModule {
    /// Module adapting `channels / divisor` LiDAR channels up to `channels`.
    pub fn new(name: impl AsRef<str>, channels: usize, divisor: usize) -> Self {
        let name = name.as_ref();
        Self {
            proj: ConvLayer::pointwise(format!("{name}.proj"), channels / divisor, channels),
            alpha_head: ConvLayer::pointwise(format!("{name}.alpha"), 2 * channels, channels),
            beta_head: ConvLayer::pointwise(format!("{name}.beta"), 2 * channels, channels),
        }
    }

    /// Parameters start at the identity adaptation: alpha is exactly 1 and
    /// beta exactly 0 everywhere, so the module initially passes the lifted
    /// LiDAR features through unchanged and learns the per-element gating
    /// from there. Random head weights would inject noise into the visual
    /// stream before the gating has converged.
    pub fn register(&self, store: &mut ParameterStore) -> Result<(), TensorError> {
        use crate::autodiff::Init;
        self.proj.register(store)?;
        store.register(
            &format!("{}.weight", self.alpha_head.name),
            [
                self.alpha_head.out_ch,
                self.alpha_head.in_ch,
                1,
                1,
            ],
            Init::Zeros,
        )?;
        store.register(
            &format!("{}.bias", self.alpha_head.name),
            [1, self.alpha_head.out_ch, 1, 1],
            Init::Constant(1.0),
        )?;
        store.register(
            &format!("{}.weight", self.beta_head.name),
            [self.beta_head.out_ch, self.beta_head.in_ch, 1, 1],
            Init::Zeros,
        )?;
        store.register(
            &format!("{}.bias", self.beta_head.name),
            [1, self.beta_head.out_ch, 1, 1],
            Init::Zeros,
        )
    }

    /// `adapted = alpha (*) proj(f_lidar) + beta` with `[alpha, beta]`
    /// computed from `concat(f_vis, proj(f_lidar))`.
    pub fn forward(
        &self,
        g: &mut Graph,
        f_vis: Var,
        f_lidar: Var,
        binding: &ParamBinding,
        store: &ParameterStore,
    ) -> Result<Var, TensorError> {
        let vis_shape = g.value(f_vis).shape;
        let lidar_shape = g.value(f_lidar).shape;
        if vis_shape[2] != lidar_shape[2] || vis_shape[3] != lidar_shape[3] {
            return Err(TensorError::ShapeMismatch {
                op: "fsa_forward",
                detail: format!("spatial dims {vis_shape:?} vs {lidar_shape:?}"),
            });
        }
        let lifted = self.proj.forward(g, f_lidar, binding, store)?;
        let joint = g.concat_channels(f_vis, lifted)?;
        let alpha = self.alpha_head.forward(g, joint, binding, store)?;
        let beta = self.beta_head.forward(g, joint, binding, store)?;
        let scaled = g.mul_elementwise(alpha, lifted)?;
        g.add(scaled, beta)
    }

    /// Multiply-accumulates of one forward pass over `h x w` features.
    pub fn mac_count(&self, h: usize, w: usize) -> u64 {
        self.proj.mac_count(h, w) + self.alpha_head.mac_count(h, w) + self.beta_head.mac_count(h, w)
    }
}

/// Residual cascaded fusion: `f_vis + lambda * adapted`.
pub fn cascaded_fuse(
    g: &mut Graph,
    f_vis: Var,
    adapted: Var,
    lambda: f64,
) -> Result<Var, TensorError> {
    let scaled = g.scale(adapted, lambda);
    g.add(f_vis, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// With divisor 1 the projection can be forced to the identity, alpha to
    /// the constant 1 and beta to 0; the adaptation then passes the LiDAR
    /// features through untouched.
    #[test]
    fn identity_adaptation_passes_lidar_through() {
        let c = 3;
        let module = FsaModule::new("fsa", c, 1);
        let mut store = ParameterStore::new(0);
        module.register(&mut store).unwrap();

        // proj = identity mapping (1x1 kernel = I across channels).
        {
            let w = store.get_mut("fsa.proj.weight").unwrap();
            w.data.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                w.data[ch * c + ch] = 1.0;
            }
        }
        // alpha head: zero weights, bias 1 -> alpha = 1 everywhere.
        store
            .get_mut("fsa.alpha.weight")
            .unwrap()
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
        store
            .get_mut("fsa.alpha.bias")
            .unwrap()
            .data
            .iter_mut()
            .for_each(|v| *v = 1.0);
        // beta head: identically zero.
        store
            .get_mut("fsa.beta.weight")
            .unwrap()
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f_vis = rand_tensor(&mut rng, [1, c, 4, 4]);
        let f_lidar = rand_tensor(&mut rng, [1, c, 4, 4]);

        let mut g = Graph::new();
        let binding = g.bind_params(&store);
        let vis = g.leaf(f_vis);
        let lidar = g.leaf(f_lidar.clone());
        let out = module.forward(&mut g, vis, lidar, &binding, &store).unwrap();
        for (a, b) in g.value(out).data.iter().zip(&f_lidar.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_heads_suppress_lidar_entirely() {
        let module = FsaModule::new("fsa", 4, 2);
        let mut store = ParameterStore::new(7);
        module.register(&mut store).unwrap();
        for name in ["fsa.alpha.weight", "fsa.alpha.bias", "fsa.beta.weight", "fsa.beta.bias"] {
            store.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_vis = rand_tensor(&mut rng, [1, 4, 3, 5]);
        let f_lidar = rand_tensor(&mut rng, [1, 2, 3, 5]);
        let mut g = Graph::new();
        let binding = g.bind_params(&store);
        let vis = g.leaf(f_vis);
        let lidar = g.leaf(f_lidar);
        let out = module.forward(&mut g, vis, lidar, &binding, &store).unwrap();
        assert!(g.value(out).data.iter().all(|&v| v == 0.0));
    }

    /// Scalar re-statement of the adaptation: per pixel, 1x1 convolutions are
    /// matrix-vector products over channels.
    #[test]
    fn random_weights_match_scalar_oracle() {
        let (c, div, h, w) = (6, 2, 4, 4);
        let module = FsaModule::new("fsa", c, div);
        let mut store = ParameterStore::new(3);
        module.register(&mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f_vis = rand_tensor(&mut rng, [1, c, h, w]);
        let f_lidar = rand_tensor(&mut rng, [1, c / div, h, w]);

        let mut g = Graph::new();
        let binding = g.bind_params(&store);
        let vis = g.leaf(f_vis.clone());
        let lidar = g.leaf(f_lidar.clone());
        let out = module.forward(&mut g, vis, lidar, &binding, &store).unwrap();

        let wp = store.get("fsa.proj.weight").unwrap();
        let bp = store.get("fsa.proj.bias").unwrap();
        let wa = store.get("fsa.alpha.weight").unwrap();
        let ba = store.get("fsa.alpha.bias").unwrap();
        let wb = store.get("fsa.beta.weight").unwrap();
        let bb = store.get("fsa.beta.bias").unwrap();

        let plane = h * w;
        for pix in 0..plane {
            // lifted = Wp * lidar + bp
            let mut lifted = vec![0.0f64; c];
            for oc in 0..c {
                let mut acc = bp.data[oc];
                for ic in 0..c / div {
                    acc += wp.data[oc * (c / div) + ic] * f_lidar.data[ic * plane + pix];
                }
                lifted[oc] = acc;
            }
            // joint = [vis, lifted]
            let mut joint = vec![0.0f64; 2 * c];
            for ch in 0..c {
                joint[ch] = f_vis.data[ch * plane + pix];
                joint[c + ch] = lifted[ch];
            }
            for oc in 0..c {
                let mut alpha = ba.data[oc];
                let mut beta = bb.data[oc];
                for ic in 0..2 * c {
                    alpha += wa.data[oc * 2 * c + ic] * joint[ic];
                    beta += wb.data[oc * 2 * c + ic] * joint[ic];
                }
                let expected = alpha * lifted[oc] + beta;
                let got = g.value(out).data[oc * plane + pix];
                assert!((got - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_with_zero_lambda_returns_visual_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f_vis = rand_tensor(&mut rng, [1, 3, 4, 4]);
        let adapted = rand_tensor(&mut rng, [1, 3, 4, 4]);
        let mut g = Graph::new();
        let a = g.leaf(f_vis.clone());
        let b = g.leaf(adapted);
        let fused = cascaded_fuse(&mut g, a, b, 0.0).unwrap();
        assert_eq!(g.value(fused).data, f_vis.data);
    }

    #[test]
    fn fuse_scales_adapted_by_lambda() {
        let mut g = Graph::new();
        let vis = g.leaf(Tensor::zeros([1, 2, 2, 2]));
        let adapted = g.leaf(Tensor::filled([1, 2, 2, 2], 1.0));
        let fused = cascaded_fuse(&mut g, vis, adapted, 0.1).unwrap();
        assert!(g.value(fused).data.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn fuse_matches_add_scale_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f_vis = rand_tensor(&mut rng, [2, 3, 3, 3]);
        let adapted = rand_tensor(&mut rng, [2, 3, 3, 3]);
        let lambda = 0.37;
        let mut g = Graph::new();
        let a = g.leaf(f_vis.clone());
        let b = g.leaf(adapted.clone());
        let fused = cascaded_fuse(&mut g, a, b, lambda).unwrap();
        for ((got, x), y) in g.value(fused).data.iter().zip(&f_vis.data).zip(&adapted.data) {
            assert!((got - (x + lambda * y)).abs() < 1e-15);
        }
    }

    #[test]
    fn mac_count_matches_conv_dimensions() {
        let module = FsaModule::new("fsa", 64, 8);
        let (h, w) = (24, 80);
        let expected = (8 * 64 + 2 * (128 * 64)) * h * w;
        assert_eq!(module.mac_count(h, w), expected as u64);
    }
}
