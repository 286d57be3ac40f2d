//! The two-stream road-detection network: a five-stage visual stream, a thin
//! five-stage LiDAR stream, per-stage feature adaptation and residual fusion
//! at stages 2-5, and three classification heads (parsing, auxiliary, LiDAR).

use crate::autodiff::{
    ConvLayer, Graph, ParamBinding, ParameterStore, Tensor, TensorError, Var,
};
use crate::eval::ConfidenceMap;

use super::config::{ConfigError, FusionMode, LossWeights, StreamConfig, TrainConfig};
#[cfg(test)]
use super::config::InputMode;
use super::fsa::{cascaded_fuse, FsaModule};

/// One convolution stage: optional 2x2 max-pool, then two 3x3 conv + ReLU.
#[derive(Debug, Clone)]
struct StageBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    pool_before: bool,
}

impl StageBlock {
    fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        dilation: usize,
        pool_before: bool,
    ) -> Self {
        Self {
            conv1: ConvLayer::same_dilated(format!("{name}.conv1"), in_ch, out_ch, 3, dilation),
            conv2: ConvLayer::same_dilated(format!("{name}.conv2"), out_ch, out_ch, 3, dilation),
            pool_before,
        }
    }

    fn register(&self, store: &mut ParameterStore) -> Result<(), TensorError> {
        self.conv1.register(store)?;
        self.conv2.register(store)
    }

    fn forward(
        &self,
        g: &mut Graph,
        input: Var,
        binding: &ParamBinding,
        store: &ParameterStore,
    ) -> Result<Var, TensorError> {
        let x = if self.pool_before {
            g.maxpool2(input)?
        } else {
            input
        };
        let c1 = self.conv1.forward(g, x, binding, store)?;
        let a1 = g.relu(c1);
        let c2 = self.conv2.forward(g, a1, binding, store)?;
        Ok(g.relu(c2))
    }
}

/// Graph handles of the three output probability maps.
pub struct ForwardVars {
    pub parsing: Var,
    pub aux: Var,
    pub lidar: Option<Var>,
}

/// Plain-tensor outputs of an inference forward pass.
pub struct ForwardOutputs {
    pub parsing: Tensor,
    pub aux: Tensor,
    pub lidar: Option<Tensor>,
}

/// The assembled network. Layer weights live in a separate
/// [`ParameterStore`]; the model itself is immutable topology.
pub struct PlardModel {
    pub config: TrainConfig,
    vis_stages: Vec<StageBlock>,
    lidar_stages: Vec<StageBlock>,
    fsa_modules: Vec<FsaModule>,
    ctx_proj: ConvLayer,
    classifier: ConvLayer,
    aux_head: ConvLayer,
    lidar_head: Option<ConvLayer>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl PlardModel {
    /// Build the layer topology and register freshly initialized parameters
    /// into a store seeded from the config.
    pub fn new(config: &TrainConfig) -> Result<(Self, ParameterStore), ModelError> {
        config.validate()?;
        let model = Self::topology(config)?;
        let mut store = ParameterStore::new(config.seed);
        model.register(&mut store)?;
        store.metadata = serde_json::to_string(config).expect("config serializes");
        Ok((model, store))
    }

    /// Rebuild the topology for a checkpoint whose metadata carries the
    /// training config.
    pub fn from_checkpoint(store: &ParameterStore) -> Result<Self, ModelError> {
        let config: TrainConfig = serde_json::from_str(&store.metadata)
            .map_err(|e| TensorError::Checkpoint(format!("bad config metadata: {e}")))?;
        Self::topology(&config).map_err(ModelError::from)
    }

    fn topology(config: &TrainConfig) -> Result<Self, ModelError> {
        let stream = &config.stream;
        stream.validate()?;
        let fusion = config.fusion_mode();
        let has_lidar = config.input_mode.lidar_channels().is_some();

        // Channel width of the fused representation leaving stage k.
        let fused_ch = |stage: usize| -> usize {
            match fusion {
                FusionMode::Concat if stage >= 1 => {
                    stream.stage_channels[stage] + stream.lidar_channels_at(stage)
                }
                _ => stream.stage_channels[stage],
            }
        };

        let mut vis_stages = Vec::with_capacity(5);
        for k in 0..5 {
            let in_ch = if k == 0 { 3 } else { fused_ch(k - 1) };
            vis_stages.push(StageBlock::new(
                &format!("vis.s{}", k + 1),
                in_ch,
                stream.stage_channels[k],
                1,
                k > 0,
            ));
        }

        let mut lidar_stages = Vec::new();
        if let Some(lidar_in) = config.input_mode.lidar_channels() {
            for k in 0..5 {
                let in_ch = if k == 0 {
                    lidar_in
                } else {
                    stream.lidar_channels_at(k - 1)
                };
                lidar_stages.push(StageBlock::new(
                    &format!("lidar.s{}", k + 1),
                    in_ch,
                    stream.lidar_channels_at(k),
                    stream.dilation_schedule[k],
                    k > 0,
                ));
            }
        }

        // Adaptation at every stage but the first.
        let mut fsa_modules = Vec::new();
        if fusion == FusionMode::Fsa {
            for k in 1..5 {
                fsa_modules.push(FsaModule::new(
                    format!("fsa.s{}", k + 1),
                    stream.stage_channels[k],
                    stream.lidar_divisor,
                ));
            }
        }

        let head_in = fused_ch(4);
        let ctx_proj = ConvLayer::pointwise("head.ctx", head_in, stream.fusion_channels);
        let classifier = ConvLayer::pointwise(
            "head.classifier",
            head_in + stream.fusion_channels,
            2,
        );
        let aux_head = ConvLayer::pointwise("head.aux", fused_ch(3), 2);
        let lidar_head = has_lidar
            .then(|| ConvLayer::pointwise("head.lidar", stream.lidar_channels_at(4), 2));

        Ok(Self {
            config: config.clone(),
            vis_stages,
            lidar_stages,
            fsa_modules,
            ctx_proj,
            classifier,
            aux_head,
            lidar_head,
        })
    }

    fn register(&self, store: &mut ParameterStore) -> Result<(), TensorError> {
        for s in &self.vis_stages {
            s.register(store)?;
        }
        for s in &self.lidar_stages {
            s.register(store)?;
        }
        for f in &self.fsa_modules {
            f.register(store)?;
        }
        self.ctx_proj.register(store)?;
        self.classifier.register(store)?;
        self.aux_head.register(store)?;
        if let Some(h) = &self.lidar_head {
            h.register(store)?;
        }
        Ok(())
    }

    pub fn stream_config(&self) -> &StreamConfig {
        &self.config.stream
    }

    pub fn fsa_modules(&self) -> &[FsaModule] {
        &self.fsa_modules
    }

    fn check_inputs(&self, image: &Tensor, lidar: Option<&Tensor>) -> Result<(), TensorError> {
        let [_, c, h, w] = image.shape;
        if c != 3 || h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                detail: format!("image must be Bx3x(16m)x(16n), got {:?}", image.shape),
            });
        }
        match (self.config.input_mode.lidar_channels(), lidar) {
            (None, None) => Ok(()),
            (Some(expect), Some(t)) => {
                if t.shape != [image.shape[0], expect, h, w] {
                    Err(TensorError::ShapeMismatch {
                        op: "forward",
                        detail: format!(
                            "lidar input {:?}, expected {:?}",
                            t.shape,
                            [image.shape[0], expect, h, w]
                        ),
                    })
                } else {
                    Ok(())
                }
            }
            (Some(_), None) => Err(TensorError::ShapeMismatch {
                op: "forward",
                detail: "model expects a lidar input".into(),
            }),
            (None, Some(_)) => Err(TensorError::ShapeMismatch {
                op: "forward",
                detail: "image-only model got a lidar input".into(),
            }),
        }
    }

    /// Full forward pass on an existing graph.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        binding: &ParamBinding,
        store: &ParameterStore,
        image: Var,
        lidar: Option<Var>,
    ) -> Result<ForwardVars, TensorError> {
        {
            let image_t = g.value(image).clone();
            let lidar_t = lidar.map(|v| g.value(v).clone());
            self.check_inputs(&image_t, lidar_t.as_ref())?;
        }
        let [_, _, full_h, full_w] = g.value(image).shape;
        let fusion = self.config.fusion_mode();

        // LiDAR stream first: it is independent of the fusion.
        let mut lidar_feats: Vec<Var> = Vec::with_capacity(5);
        if let Some(lidar_in) = lidar {
            let mut prev = lidar_in;
            for stage in &self.lidar_stages {
                prev = stage.forward(g, prev, binding, store)?;
                lidar_feats.push(prev);
            }
        }

        // Visual stream with per-stage fusion from stage 2 on.
        let mut prev = image;
        let mut fused_feats: Vec<Var> = Vec::with_capacity(5);
        for (k, stage) in self.vis_stages.iter().enumerate() {
            let v_k = stage.forward(g, prev, binding, store)?;
            let fused = if k == 0 {
                v_k
            } else {
                match fusion {
                    FusionMode::None => v_k,
                    FusionMode::Concat => g.concat_channels(v_k, lidar_feats[k])?,
                    FusionMode::Fsa => {
                        let adapted = self.fsa_modules[k - 1]
                            .forward(g, v_k, lidar_feats[k], binding, store)?;
                        cascaded_fuse(g, v_k, adapted, self.config.lambda)?
                    }
                }
            };
            fused_feats.push(fused);
            prev = fused;
        }

        let parsing = self.parsing_head(g, fused_feats[4], full_h, full_w, binding, store)?;

        let aux_logits = self.aux_head.forward(g, fused_feats[3], binding, store)?;
        let aux_up = g.upsample_bilinear(aux_logits, full_h, full_w)?;
        let aux = g.softmax_channels(aux_up);

        let lidar_out = match &self.lidar_head {
            Some(head) => {
                let logits = head.forward(g, lidar_feats[4], binding, store)?;
                let up = g.upsample_bilinear(logits, full_h, full_w)?;
                Some(g.softmax_channels(up))
            }
            None => None,
        };

        Ok(ForwardVars {
            parsing,
            aux,
            lidar: lidar_out,
        })
    }

    /// Parsing head: global-average context, projected and broadcast, joined
    /// with the stage-5 features, then classified and upsampled.
    fn parsing_head(
        &self,
        g: &mut Graph,
        features: Var,
        full_h: usize,
        full_w: usize,
        binding: &ParamBinding,
        store: &ParameterStore,
    ) -> Result<Var, TensorError> {
        let [_, _, h5, w5] = g.value(features).shape;
        let pooled = g.global_avg_pool(features);
        let ctx = self.ctx_proj.forward(g, pooled, binding, store)?;
        let ctx = g.relu(ctx);
        let ctx = g.broadcast_spatial(ctx, h5, w5)?;
        let joint = g.concat_channels(features, ctx)?;
        let logits = self.classifier.forward(g, joint, binding, store)?;
        let up = g.upsample_bilinear(logits, full_h, full_w)?;
        Ok(g.softmax_channels(up))
    }

    /// Convenience inference pass; returns plain tensors.
    pub fn forward(
        &self,
        store: &ParameterStore,
        image: &Tensor,
        lidar: Option<&Tensor>,
    ) -> Result<ForwardOutputs, TensorError> {
        let mut g = Graph::new();
        let binding = g.bind_params(store);
        let image_var = g.leaf(image.clone());
        let lidar_var = lidar.map(|t| g.leaf(t.clone()));
        let out = self.forward_graph(&mut g, &binding, store, image_var, lidar_var)?;
        Ok(ForwardOutputs {
            parsing: g.value(out.parsing).clone(),
            aux: g.value(out.aux).clone(),
            lidar: out.lidar.map(|v| g.value(v).clone()),
        })
    }

    /// Visual-path-only forward: runs the visual stages and the parsing head
    /// with no fusion arithmetic at all. With shared weights and `lambda = 0`
    /// the fused forward reproduces this bit for bit.
    pub fn forward_visual_only(
        &self,
        store: &ParameterStore,
        image: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let mut g = Graph::new();
        let binding = g.bind_params(store);
        let [_, _, full_h, full_w] = image.shape;
        let mut prev = g.leaf(image.clone());
        for stage in &self.vis_stages {
            prev = stage.forward(&mut g, prev, &binding, store)?;
        }
        let parsing = self.parsing_head(&mut g, prev, full_h, full_w, &binding, store)?;
        Ok(g.value(parsing).clone())
    }

    /// Weighted sum of the three cross-entropy terms.
    pub fn total_loss_graph(
        &self,
        g: &mut Graph,
        outputs: &ForwardVars,
        target: Var,
        mask: Option<Var>,
        weights: &LossWeights,
    ) -> Result<Var, TensorError> {
        let parsing_ce = g.cross_entropy_log10(outputs.parsing, target, mask)?;
        let mut total = g.scale(parsing_ce, weights.parsing);
        let aux_ce = g.cross_entropy_log10(outputs.aux, target, mask)?;
        let aux_term = g.scale(aux_ce, weights.aux);
        total = g.add(total, aux_term)?;
        if let Some(lidar) = outputs.lidar {
            let lidar_ce = g.cross_entropy_log10(lidar, target, mask)?;
            let lidar_term = g.scale(lidar_ce, weights.lidar);
            total = g.add(total, lidar_term)?;
        }
        Ok(total)
    }
}

/// Slice the road channel (channel 1) of a parsing output into a confidence
/// map. Batch must be 1.
pub fn road_probability(parsing: &Tensor) -> ConfidenceMap {
    let [b, c, h, w] = parsing.shape;
    debug_assert_eq!(b, 1);
    debug_assert_eq!(c, 2);
    let plane = h * w;
    ConfidenceMap {
        width: w,
        height: h,
        values: parsing.data[plane..2 * plane].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::tests::test_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(mode: InputMode, fsa: bool) -> TrainConfig {
        TrainConfig {
            input_mode: mode,
            fsa,
            stream: StreamConfig {
                stage_channels: [8, 16, 16, 32, 32],
                lidar_divisor: 8,
                fusion_channels: 16,
                dilation_schedule: [1, 1, 2, 2, 2],
            },
            input_height: 32,
            input_width: 96,
            ..test_config()
        }
    }

    fn rand_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            [1, c, h, w],
            (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn outputs_are_probability_maps_at_input_resolution() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let out = model.forward(&store, &image, Some(&adt)).unwrap();
        for t in [&out.parsing, &out.aux, out.lidar.as_ref().unwrap()] {
            assert_eq!(t.shape, [1, 2, 32, 96]);
            let plane = 32 * 96;
            for p in 0..plane {
                let sum = t.data[p] + t.data[plane + p];
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fusion_happens_at_exactly_four_stages() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, _) = PlardModel::new(&cfg).unwrap();
        assert_eq!(model.fsa_modules().len(), 4);
        assert_eq!(model.vis_stages.len(), 5);
    }

    #[test]
    fn image_only_model_has_no_lidar_parts() {
        let cfg = small_config(InputMode::ImageOnly, true);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        assert!(model.lidar_stages.is_empty());
        assert!(model.fsa_modules().is_empty());
        assert!(model.lidar_head.is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let image = rand_image(&mut rng, 3, 32, 96);
        let out = model.forward(&store, &image, None).unwrap();
        assert!(out.lidar.is_none());
    }

    #[test]
    fn lambda_zero_reduces_to_visual_only_bitwise() {
        let mut cfg = small_config(InputMode::Adt, true);
        cfg.lambda = 0.0;
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let fused = model.forward(&store, &image, Some(&adt)).unwrap();
        let visual = model.forward_visual_only(&store, &image).unwrap();
        assert_eq!(fused.parsing.data, visual.data);
    }

    #[test]
    fn zeroed_fsa_heads_give_adapted_features_equal_zero() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, mut store) = PlardModel::new(&cfg).unwrap();
        for k in 2..=5 {
            for head in ["alpha", "beta"] {
                for part in ["weight", "bias"] {
                    store
                        .get_mut(&format!("fsa.s{k}.{head}.{part}"))
                        .unwrap()
                        .data
                        .iter_mut()
                        .for_each(|v| *v = 0.0);
                }
            }
        }
        // adapted = 0 everywhere means fused forward equals visual forward
        // (0 * lambda injected as exact zeros).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let fused = model.forward(&store, &image, Some(&adt)).unwrap();
        let visual = model.forward_visual_only(&store, &image).unwrap();
        for (a, b) in fused.parsing.data.iter().zip(&visual.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let run = || {
            let cfg = small_config(InputMode::Adt, true);
            let (model, store) = PlardModel::new(&cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let image = rand_image(&mut rng, 3, 32, 96);
            let adt = rand_image(&mut rng, 1, 32, 96);
            let out = model.forward(&store, &image, Some(&adt)).unwrap();
            out.parsing.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn concat_fusion_widens_the_visual_stream() {
        let cfg = small_config(InputMode::LProj, false);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let image = rand_image(&mut rng, 3, 32, 96);
        let lproj = rand_image(&mut rng, 3, 32, 96);
        let out = model.forward(&store, &image, Some(&lproj)).unwrap();
        assert_eq!(out.parsing.shape, [1, 2, 32, 96]);
        // Stage-2 output fuses by concatenation, so stage 3 consumes the
        // widened representation; stage 2 still reads the unfused stage-1 one.
        assert_eq!(model.vis_stages[1].conv1.in_ch, 8);
        assert_eq!(model.vis_stages[2].conv1.in_ch, 16 + 2);
    }

    #[test]
    fn uniform_prediction_loss_matches_weighted_log_half() {
        // Zeroed classifier weights give exactly uniform softmax outputs,
        // so every CE term is -log10(0.5) and the total is the weight sum
        // times that.
        let cfg = small_config(InputMode::Adt, true);
        let (model, mut store) = PlardModel::new(&cfg).unwrap();
        for name in [
            "head.classifier.weight",
            "head.classifier.bias",
            "head.aux.weight",
            "head.aux.bias",
            "head.lidar.weight",
            "head.lidar.bias",
        ] {
            store.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let mut target = Tensor::zeros([1, 2, 32, 96]);
        for p in 0..32 * 96 {
            target.data[p] = 1.0;
        }

        let mut g = Graph::new();
        let binding = g.bind_params(&store);
        let image_var = g.leaf(image);
        let adt_var = g.leaf(adt);
        let outputs = model
            .forward_graph(&mut g, &binding, &store, image_var, Some(adt_var))
            .unwrap();
        let target_var = g.leaf(target);
        let weights = LossWeights::default();
        let loss = model
            .total_loss_graph(&mut g, &outputs, target_var, None, &weights)
            .unwrap();
        let expected = (1.0 + 0.4 + 0.16) * -(0.5f64.log10());
        assert!(
            (g.value(loss).item() - expected).abs() < 1e-6,
            "{} vs {}",
            g.value(loss).item(),
            expected
        );
    }

    #[test]
    fn parsing_weight_alone_reduces_to_parsing_loss() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let mut target = Tensor::zeros([1, 2, 32, 96]);
        for p in 0..32 * 96 {
            let c = rng.gen_range(0..2usize);
            target.data[c * 32 * 96 + p] = 1.0;
        }

        let mut g = Graph::new();
        let binding = g.bind_params(&store);
        let image_var = g.leaf(image);
        let adt_var = g.leaf(adt);
        let outputs = model
            .forward_graph(&mut g, &binding, &store, image_var, Some(adt_var))
            .unwrap();
        let target_var = g.leaf(target);
        let only_parsing = LossWeights {
            parsing: 1.0,
            lidar: 0.0,
            aux: 0.0,
        };
        let total = model
            .total_loss_graph(&mut g, &outputs, target_var, None, &only_parsing)
            .unwrap();
        let direct = g
            .cross_entropy_log10(outputs.parsing, target_var, None)
            .unwrap();
        assert!((g.value(total).item() - g.value(direct).item()).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_rebuilds_the_same_model() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let bytes = store.to_bytes();
        let loaded = ParameterStore::from_bytes(&bytes).unwrap();
        let rebuilt = PlardModel::from_checkpoint(&loaded).unwrap();
        assert_eq!(rebuilt.config, model.config);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image = rand_image(&mut rng, 3, 32, 96);
        let adt = rand_image(&mut rng, 1, 32, 96);
        let a = model.forward(&store, &image, Some(&adt)).unwrap();
        let b = rebuilt.forward(&loaded, &image, Some(&adt)).unwrap();
        assert_eq!(a.parsing.data, b.parsing.data);
    }

    #[test]
    fn mismatched_lidar_input_is_rejected() {
        let cfg = small_config(InputMode::Adt, true);
        let (model, store) = PlardModel::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let image = rand_image(&mut rng, 3, 32, 96);
        assert!(model.forward(&store, &image, None).is_err());
        let wrong = rand_image(&mut rng, 3, 32, 96);
        assert!(model.forward(&store, &image, Some(&wrong)).is_err());
    }
}
