//! The dual-stream model: a residual stream over SRM high-pass maps and a
//! content stream over mixed-color difference maps, downsampled by stacked
//! CNN blocks, exchanged through cross multi-head attention encoder blocks,
//! then fused by channel concatenation into a global-average-pooled binary
//! classifier. The positive class (logit > 0) is "generated".

mod attention;
mod blocks;

pub use attention::{
    cma_forward, cma_forward_traced, CmaParams, CmaTrace, EncoderBlock,
};
pub use blocks::{Conv2d, ContentHead, Linear, Mlp, ModuleA, ModuleB1, ModuleB2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::srm::{build_filter_bank, extract_residuals, FilterBank};
use crate::tensor::{BatchNormState, Tensor};

/// Architecture hyperparameters. The parameter set of a model is a pure
/// function of this struct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input side length s; images are (3, s, s). Must be a multiple of 32.
    pub input_side: usize,
    /// Attention head count h.
    pub heads: usize,
    /// Token embedding width (also the channel count entering attention).
    pub embed_width: usize,
    /// Number of encoder blocks, each with independent parameters.
    pub encoder_repeats: usize,
    /// MLP expansion ratio inside encoder blocks.
    pub mlp_ratio: usize,
    /// Channel widths of the three downsampling stages before attention.
    pub channel_plan: Vec<usize>,
    /// Channel widths of the two downsampling stages after attention.
    pub post_plan: Vec<usize>,
    pub residual_stream: bool,
    pub content_stream: bool,
    pub cross_attention: bool,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 256,
            heads: 8,
            embed_width: 256,
            encoder_repeats: 2,
            mlp_ratio: 4,
            channel_plan: vec![64, 128, 256],
            post_plan: vec![256, 256],
            residual_stream: true,
            content_stream: true,
            cross_attention: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_side == 0 || !self.input_side.is_multiple_of(32) {
            return fail(format!(
                "input_side {} must be a positive multiple of 32",
                self.input_side
            ));
        }
        if self.heads == 0 || !self.embed_width.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_width {} must be divisible by heads {}",
                self.embed_width, self.heads
            ));
        }
        if !self.residual_stream && !self.content_stream {
            return fail("at least one stream must be enabled".to_string());
        }
        if self.cross_attention && !(self.residual_stream && self.content_stream) {
            return fail("cross attention requires both streams".to_string());
        }
        if self.channel_plan.len() != 3 || self.channel_plan.contains(&0) {
            return fail(format!(
                "channel_plan {:?} must list three positive stage widths",
                self.channel_plan
            ));
        }
        if self.post_plan.len() != 2 || self.post_plan.contains(&0) {
            return fail(format!(
                "post_plan {:?} must list two positive stage widths",
                self.post_plan
            ));
        }
        if *self.channel_plan.last().unwrap() != self.embed_width {
            return fail(format!(
                "last pre-attention stage width {} must equal embed_width {}",
                self.channel_plan.last().unwrap(),
                self.embed_width
            ));
        }
        if self.encoder_repeats == 0 || self.mlp_ratio == 0 {
            return fail("encoder_repeats and mlp_ratio must be >= 1".to_string());
        }
        Ok(())
    }

    /// Token count per sample entering attention: (s/8)^2.
    pub fn token_count(&self) -> usize {
        let r = self.input_side / 8;
        r * r
    }

    /// Width of the pooled feature vector entering the classifier.
    pub fn classifier_input(&self) -> usize {
        let last = *self.post_plan.last().unwrap();
        if self.residual_stream && self.content_stream {
            2 * last
        } else {
            last
        }
    }
}

/// Records named intermediate shapes during a forward pass.
#[derive(Debug, Default)]
pub struct ShapeTrace {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ShapeTrace {
    fn record(&mut self, name: &str, shape: &[usize]) {
        self.entries.push((name.to_string(), shape.to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }
}

struct ResidualStream<T: Scalar> {
    bank: FilterBank<T>,
    a: ModuleA<T>,
    b1_1: ModuleB1<T>,
    b1_2: ModuleB1<T>,
    b1_3: ModuleB1<T>,
    b1_4: ModuleB1<T>,
}

struct ContentStream<T: Scalar> {
    head: ContentHead<T>,
    a: ModuleA<T>,
    b2_1: ModuleB2<T>,
    b2_2: ModuleB2<T>,
    b2_3: ModuleB2<T>,
    b2_4: ModuleB2<T>,
}

/// The assembled model: configuration plus every trainable tensor and
/// batch-norm state. Construction is deterministic in the seed.
pub struct Model<T: Scalar> {
    config: ModelConfig,
    residual: Option<ResidualStream<T>>,
    content: Option<ContentStream<T>>,
    encoder: Vec<EncoderBlock<T>>,
    fc: Linear<T>,
}

impl<T: Scalar> Model<T> {
    /// Build and initialize all parameters from the config seed:
    /// fan-in-scaled uniform weights, zero biases, unit gamma, zero beta.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [c_a, c_b1, c_b2] = [
            config.channel_plan[0],
            config.channel_plan[1],
            config.channel_plan[2],
        ];
        let [p_1, p_2] = [config.post_plan[0], config.post_plan[1]];

        let residual = if config.residual_stream {
            Some(ResidualStream {
                bank: build_filter_bank::<T>(),
                a: ModuleA::init(90, c_a, &mut rng)?,
                b1_1: ModuleB1::init(c_a, c_b1, &mut rng)?,
                b1_2: ModuleB1::init(c_b1, c_b2, &mut rng)?,
                b1_3: ModuleB1::init(c_b2, p_1, &mut rng)?,
                b1_4: ModuleB1::init(p_1, p_2, &mut rng)?,
            })
        } else {
            None
        };
        let content = if config.content_stream {
            Some(ContentStream {
                head: ContentHead::init(&mut rng),
                a: ModuleA::init(12, c_a, &mut rng)?,
                b2_1: ModuleB2::init(c_a, c_b1, &mut rng)?,
                b2_2: ModuleB2::init(c_b1, c_b2, &mut rng)?,
                b2_3: ModuleB2::init(c_b2, p_1, &mut rng)?,
                b2_4: ModuleB2::init(p_1, p_2, &mut rng)?,
            })
        } else {
            None
        };
        let encoder = if config.cross_attention {
            (0..config.encoder_repeats)
                .map(|_| {
                    EncoderBlock::init(config.embed_width, config.heads, config.mlp_ratio, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let fc = Linear::init(config.classifier_input(), 1, true, &mut rng);
        Ok(Model {
            config: config.clone(),
            residual,
            content,
            encoder,
            fc,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder_blocks(&self) -> &[EncoderBlock<T>] {
        &self.encoder
    }

    /// Logits for a batch of images (N,3,s,s); positive means "generated".
    /// The sigmoid is applied by the loss and prediction layers, not here.
    pub fn forward(&self, images: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        self.forward_inner(images, training, None)
    }

    /// Forward pass that also reports key intermediate shapes.
    pub fn forward_traced(
        &self,
        images: &Tensor<T>,
        training: bool,
    ) -> Result<(Tensor<T>, ShapeTrace)> {
        let mut trace = ShapeTrace::default();
        let logits = self.forward_inner(images, training, Some(&mut trace))?;
        Ok((logits, trace))
    }

    fn forward_inner(
        &self,
        images: &Tensor<T>,
        training: bool,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Tensor<T>> {
        let s = self.config.input_side;
        if images.rank() != 4 || images.shape()[1] != 3 || images.shape()[2] != s
            || images.shape()[3] != s
        {
            return Err(Error::dim(format!(
                "model expects (N,3,{s},{s}) input, got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        let embed = self.config.embed_width;
        let pre_side = s / 8;

        let mut chi = match &self.residual {
            Some(rs) => {
                let x = extract_residuals(images, &rs.bank)?;
                let x = rs.a.forward(&x, training)?;
                let x = rs.b1_1.forward(&x, training)?;
                let x = rs.b1_2.forward(&x, training)?;
                expect_shape(&x, &[n, embed, pre_side, pre_side], "residual pre-attention maps")?;
                if let Some(t) = trace.as_deref_mut() {
                    t.record("residual_pre_attention", x.shape());
                }
                Some(x)
            }
            None => None,
        };
        let mut phi = match &self.content {
            Some(cs) => {
                let x = cs.head.forward(images)?;
                let x = cs.a.forward(&x, training)?;
                let x = cs.b2_1.forward(&x, training)?;
                let x = cs.b2_2.forward(&x, training)?;
                expect_shape(&x, &[n, embed, pre_side, pre_side], "content pre-attention maps")?;
                if let Some(t) = trace.as_deref_mut() {
                    t.record("content_pre_attention", x.shape());
                }
                Some(x)
            }
            None => None,
        };

        if !self.encoder.is_empty() {
            let (chi_maps, phi_maps) = (chi.take().unwrap(), phi.take().unwrap());
            let mut chi_t = chi_maps.tokens_from_maps(embed)?;
            let mut phi_t = phi_maps.tokens_from_maps(embed)?;
            expect_shape(&chi_t, &[n, self.config.token_count(), embed], "token matrix")?;
            if let Some(t) = trace.as_deref_mut() {
                t.record("tokens", chi_t.shape());
            }
            for block in &self.encoder {
                let (c, p) = block.forward(&chi_t, &phi_t)?;
                chi_t = c;
                phi_t = p;
            }
            chi = Some(chi_t.maps_from_tokens(embed)?);
            phi = Some(phi_t.maps_from_tokens(embed)?);
        }

        if let (Some(rs), Some(x)) = (&self.residual, chi.take()) {
            let x = rs.b1_3.forward(&x, training)?;
            chi = Some(rs.b1_4.forward(&x, training)?);
        }
        if let (Some(cs), Some(x)) = (&self.content, phi.take()) {
            let x = cs.b2_3.forward(&x, training)?;
            phi = Some(cs.b2_4.forward(&x, training)?);
        }

        let fused = match (&chi, &phi) {
            (Some(c), Some(p)) => Tensor::concat(&[c, p], 1)?,
            (Some(c), None) => c.clone(),
            (None, Some(p)) => p.clone(),
            (None, None) => unreachable!("config validation requires a stream"),
        };
        let pooled = fused.global_avg_pool()?;
        expect_shape(&pooled, &[n, self.config.classifier_input()], "classifier input")?;
        if let Some(t) = trace {
            t.record("classifier_input", pooled.shape());
        }
        self.fc.forward(&pooled)?.reshape(&[n])
    }

    /// Every trainable tensor in a fixed, construction-order traversal.
    /// Names follow stream.stage.role.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = Vec::new();
        let mut push = |name: String, t: &Tensor<T>| out.push((name, t.clone()));

        fn conv<T: Scalar>(
            push: &mut impl FnMut(String, &Tensor<T>),
            prefix: &str,
            c: &Conv2d<T>,
        ) {
            push(format!("{prefix}.weight"), &c.weight);
            if let Some(b) = &c.bias {
                push(format!("{prefix}.bias"), b);
            }
        }
        fn linear<T: Scalar>(
            push: &mut impl FnMut(String, &Tensor<T>),
            prefix: &str,
            l: &Linear<T>,
        ) {
            push(format!("{prefix}.weight"), &l.weight);
            if let Some(b) = &l.bias {
                push(format!("{prefix}.bias"), b);
            }
        }
        fn bn<T: Scalar>(
            push: &mut impl FnMut(String, &Tensor<T>),
            prefix: &str,
            s: &BatchNormState<T>,
        ) {
            push(format!("{prefix}.gamma"), &s.gamma);
            push(format!("{prefix}.beta"), &s.beta);
        }
        fn ln<T: Scalar>(
            push: &mut impl FnMut(String, &Tensor<T>),
            prefix: &str,
            s: &crate::tensor::LayerNormState<T>,
        ) {
            push(format!("{prefix}.gamma"), &s.gamma);
            push(format!("{prefix}.beta"), &s.beta);
        }

        if let Some(rs) = &self.residual {
            conv(&mut push, "res.a.conv1", &rs.a.conv1);
            bn(&mut push, "res.a.bn1", &rs.a.bn1);
            conv(&mut push, "res.a.conv2", &rs.a.conv2);
            bn(&mut push, "res.a.bn2", &rs.a.bn2);
            for (name, m) in [
                ("res.b1_1", &rs.b1_1),
                ("res.b1_2", &rs.b1_2),
                ("res.b1_3", &rs.b1_3),
                ("res.b1_4", &rs.b1_4),
            ] {
                conv(&mut push, &format!("{name}.conv"), &m.conv);
                bn(&mut push, &format!("{name}.bn"), &m.bn);
                conv(&mut push, &format!("{name}.down"), &m.down);
            }
        }
        if let Some(cs) = &self.content {
            conv(&mut push, "con.head.mix", &cs.head.mix);
            conv(&mut push, "con.head.sub", &cs.head.sub);
            conv(&mut push, "con.head.cat", &cs.head.cat);
            conv(&mut push, "con.a.conv1", &cs.a.conv1);
            bn(&mut push, "con.a.bn1", &cs.a.bn1);
            conv(&mut push, "con.a.conv2", &cs.a.conv2);
            bn(&mut push, "con.a.bn2", &cs.a.bn2);
            for (name, m) in [
                ("con.b2_1", &cs.b2_1),
                ("con.b2_2", &cs.b2_2),
                ("con.b2_3", &cs.b2_3),
                ("con.b2_4", &cs.b2_4),
            ] {
                conv(&mut push, &format!("{name}.conv"), &m.conv);
                bn(&mut push, &format!("{name}.bn"), &m.bn);
            }
        }
        for (i, block) in self.encoder.iter().enumerate() {
            let p = format!("enc{i}");
            ln(&mut push, &format!("{p}.ln_chi_attn"), &block.ln_first_attn);
            ln(&mut push, &format!("{p}.ln_phi_attn"), &block.ln_second_attn);
            for (role, heads) in [
                ("q_chi", &block.cma.q_first),
                ("k_phi", &block.cma.k_second),
                ("q_phi", &block.cma.q_second),
                ("k_chi", &block.cma.k_first),
            ] {
                for (h, w) in heads.iter().enumerate() {
                    push(format!("{p}.{role}.h{h}.weight"), w);
                }
            }
            linear(&mut push, &format!("{p}.out_chi"), &block.out_first);
            linear(&mut push, &format!("{p}.out_phi"), &block.out_second);
            ln(&mut push, &format!("{p}.ln_chi_mlp"), &block.ln_first_mlp);
            ln(&mut push, &format!("{p}.ln_phi_mlp"), &block.ln_second_mlp);
            linear(&mut push, &format!("{p}.mlp_chi.fc1"), &block.mlp_first.fc1);
            linear(&mut push, &format!("{p}.mlp_chi.fc2"), &block.mlp_first.fc2);
            linear(&mut push, &format!("{p}.mlp_phi.fc1"), &block.mlp_second.fc1);
            linear(&mut push, &format!("{p}.mlp_phi.fc2"), &block.mlp_second.fc2);
        }
        linear(&mut push, "fc", &self.fc);
        out
    }

    /// Batch-norm states (running statistics live here), with name prefixes
    /// matching [`Model::named_parameters`].
    pub fn bn_states(&self) -> Vec<(String, &BatchNormState<T>)> {
        let mut out = Vec::new();
        if let Some(rs) = &self.residual {
            out.push(("res.a.bn1".to_string(), &rs.a.bn1));
            out.push(("res.a.bn2".to_string(), &rs.a.bn2));
            for (name, m) in [
                ("res.b1_1", &rs.b1_1),
                ("res.b1_2", &rs.b1_2),
                ("res.b1_3", &rs.b1_3),
                ("res.b1_4", &rs.b1_4),
            ] {
                out.push((format!("{name}.bn"), &m.bn));
            }
        }
        if let Some(cs) = &self.content {
            out.push(("con.a.bn1".to_string(), &cs.a.bn1));
            out.push(("con.a.bn2".to_string(), &cs.a.bn2));
            for (name, m) in [
                ("con.b2_1", &cs.b2_1),
                ("con.b2_2", &cs.b2_2),
                ("con.b2_3", &cs.b2_3),
                ("con.b2_4", &cs.b2_4),
            ] {
                out.push((format!("{name}.bn"), &m.bn));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named_parameters() {
            t.zero_grad();
        }
    }
}

fn expect_shape<T: Scalar>(t: &Tensor<T>, want: &[usize], what: &str) -> Result<()> {
    if t.shape() != want {
        return Err(Error::dim(format!(
            "{what}: expected shape {want:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> ModelConfig {
        ModelConfig {
            input_side: 32,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_violations() {
        let mut c = desk_config();
        c.input_side = 48;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = desk_config();
        c.heads = 7;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = desk_config();
        c.residual_stream = false;
        c.content_stream = false;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = desk_config();
        c.content_stream = false;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.cross_attention = false;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn desk_model_forward_shapes() {
        let cfg = desk_config();
        let model = Model::<f64>::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::rand_uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut rng);
        let (logits, trace) = model.forward_traced(&x, true).unwrap();
        assert_eq!(logits.shape(), &[2]);
        assert_eq!(trace.get("residual_pre_attention").unwrap(), &[2, 256, 4, 4]);
        assert_eq!(trace.get("content_pre_attention").unwrap(), &[2, 256, 4, 4]);
        assert_eq!(trace.get("tokens").unwrap(), &[2, 16, 256]);
        assert_eq!(trace.get("classifier_input").unwrap(), &[2, 512]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = desk_config();
        let a = Model::<f64>::init(&cfg).unwrap();
        let b = Model::<f64>::init(&cfg).unwrap();
        for ((na, ta), (nb, tb)) in a.named_parameters().iter().zip(b.named_parameters()) {
            assert_eq!(na, &nb);
            assert_eq!(ta.to_vec(), tb.to_vec(), "{na} differs");
        }
    }

    #[test]
    fn different_seed_differs_somewhere() {
        let a = Model::<f64>::init(&desk_config()).unwrap();
        let mut cfg = desk_config();
        cfg.seed = 8;
        let b = Model::<f64>::init(&cfg).unwrap();
        let differs = a
            .named_parameters()
            .iter()
            .zip(b.named_parameters())
            .any(|((_, ta), (_, tb))| ta.to_vec() != tb.to_vec());
        assert!(differs);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = desk_config();
        let model = Model::<f64>::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let a = model.forward(&x, false).unwrap().to_vec();
        let b = model.forward(&x, false).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_names_are_unique() {
        let model = Model::<f64>::init(&desk_config()).unwrap();
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn single_stream_models_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
        for (res, con) in [(true, false), (false, true)] {
            let cfg = ModelConfig {
                input_side: 32,
                residual_stream: res,
                content_stream: con,
                cross_attention: false,
                ..ModelConfig::default()
            };
            let model = Model::<f64>::init(&cfg).unwrap();
            let (logits, trace) = model.forward_traced(&x, true).unwrap();
            assert_eq!(logits.shape(), &[1]);
            assert_eq!(trace.get("classifier_input").unwrap(), &[1, 256]);
        }
    }

    #[test]
    fn rejects_wrong_input_side() {
        let model = Model::<f64>::init(&desk_config()).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 3, 64, 64]);
        assert!(matches!(model.forward(&x, false), Err(Error::Dim(_))));
    }
}
