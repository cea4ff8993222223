//! Built-in architectures: the ResNet-18 reference and the four
//! published STResNet variants, reproduced row-by-row from their
//! layer tables.
//!
//! Conventions shared by every preset: conv layers carry batch-norm
//! tags and no bias; the classifier is avgpool + linear 512->1000;
//! weights are deterministic per-layer seeds. ResNet-18 uses 1x1
//! projection shortcuts on downsampling blocks; the ST variants use
//! plain (shortcut-free) transition blocks and identity residuals
//! elsewhere, which is what their published parameter totals imply.

use crate::model::{LayerKind, LayerSpec, ModelError, ModelGraph, WeightSpec, stable_seed};

pub const PRESET_NAMES: [&str; 5] = [
    "resnet18",
    "stresnet-tiny",
    "stresnet-micro",
    "stresnet-nano",
    "stresnet-pico",
];

/// One conv unit inside a residual block.
#[derive(Clone, Copy)]
enum Unit {
    /// Plain 3x3 conv n -> m.
    Full { n: usize, m: usize },
    /// Decomposed 1x1 n->r, 3x3 r (stride on the core), 1x1 r->m.
    Triplet { n: usize, r: usize, m: usize },
}

use Unit::{Full, Triplet};

struct Builder {
    preset: &'static str,
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new(preset: &'static str, input_shape: [usize; 3]) -> Self {
        let input = LayerSpec {
            id: "input".to_string(),
            kind: LayerKind::Input,
            in_channels: input_shape[0],
            out_channels: input_shape[0],
            kernel_size: None,
            stride: 1,
            padding: 0,
            inputs: vec![],
            bn: false,
            bias: false,
            decomposable: false,
            weights: None,
        };
        Builder {
            preset,
            layers: vec![input],
        }
    }

    fn seed_for(&self, id: &str) -> u64 {
        stable_seed(&format!("{}:{id}", self.preset))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: &str,
        n: usize,
        m: usize,
        k: usize,
        stride: usize,
        padding: usize,
        decomposable: bool,
        input: &str,
    ) -> String {
        let mut layer = LayerSpec::conv(id, n, m, k, stride, padding, input);
        layer.bn = true;
        layer.decomposable = decomposable;
        layer.weights = Some(WeightSpec::Seed(self.seed_for(id)));
        self.layers.push(layer);
        id.to_string()
    }

    fn maxpool(&mut self, id: &str, c: usize, k: usize, stride: usize, padding: usize, input: &str) -> String {
        self.layers.push(LayerSpec {
            id: id.to_string(),
            kind: LayerKind::Maxpool,
            in_channels: c,
            out_channels: c,
            kernel_size: Some(k),
            stride,
            padding,
            inputs: vec![input.to_string()],
            bn: false,
            bias: false,
            decomposable: false,
            weights: None,
        });
        id.to_string()
    }

    fn add(&mut self, id: &str, c: usize, inputs: &[&str]) -> String {
        self.layers.push(LayerSpec {
            id: id.to_string(),
            kind: LayerKind::Add,
            in_channels: c,
            out_channels: c,
            kernel_size: None,
            stride: 1,
            padding: 0,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            bn: false,
            bias: false,
            decomposable: false,
            weights: None,
        });
        id.to_string()
    }

    fn unit(&mut self, id_base: &str, unit: Unit, stride: usize, input: &str) -> (String, usize) {
        match unit {
            Full { n, m } => {
                let id = self.conv(id_base, n, m, 3, stride, 1, true, input);
                (id, m)
            }
            Triplet { n, r, m } => {
                let a = self.conv(&format!("{id_base}_a"), n, r, 1, 1, 0, false, input);
                let b = self.conv(&format!("{id_base}_b"), r, r, 3, stride, 1, true, &a);
                let c = self.conv(&format!("{id_base}_c"), r, m, 1, 1, 0, false, &b);
                (c, m)
            }
        }
    }

    /// Residual block of two units. `stride` applies to the first
    /// unit. `shortcut` adds a 1x1 projection on transition blocks
    /// (the ResNet-18 convention); without it, transition blocks are
    /// plain and only matching-shape blocks get an identity residual.
    fn block(
        &mut self,
        id_base: &str,
        units: [Unit; 2],
        stride: usize,
        projection_shortcut: bool,
        input: &str,
    ) -> String {
        let block_in_channels = match units[0] {
            Full { n, .. } | Triplet { n, .. } => n,
        };
        let (u1, _) = self.unit(&format!("{id_base}c1"), units[0], stride, input);
        let (u2, out_c) = self.unit(&format!("{id_base}c2"), units[1], 1, &u1);
        let transition = stride != 1 || block_in_channels != out_c;
        if !transition {
            self.add(&format!("{id_base}_add"), out_c, &[input, &u2])
        } else if projection_shortcut {
            let down = self.conv(
                &format!("{id_base}_down"),
                block_in_channels,
                out_c,
                1,
                stride,
                0,
                false,
                input,
            );
            self.add(&format!("{id_base}_add"), out_c, &[&down, &u2])
        } else {
            u2
        }
    }

    fn head(&mut self, input: &str, c: usize) {
        let pooled = LayerSpec {
            id: "avgpool".to_string(),
            kind: LayerKind::AvgpoolGlobal,
            in_channels: c,
            out_channels: c,
            kernel_size: None,
            stride: 1,
            padding: 0,
            inputs: vec![input.to_string()],
            bn: false,
            bias: false,
            decomposable: false,
            weights: None,
        };
        self.layers.push(pooled);
        let mut fc = LayerSpec {
            id: "fc".to_string(),
            kind: LayerKind::Linear,
            in_channels: c,
            out_channels: 1000,
            kernel_size: None,
            stride: 1,
            padding: 0,
            inputs: vec!["avgpool".to_string()],
            bn: false,
            bias: true,
            decomposable: false,
            weights: None,
        };
        fc.weights = Some(WeightSpec::Seed(self.seed_for("fc")));
        self.layers.push(fc);
    }

    fn finish(self) -> Result<ModelGraph, ModelError> {
        ModelGraph {
            input_shape: [3, 224, 224],
            layers: self.layers,
            outputs: vec!["fc".to_string()],
        }
        .finalize()
    }
}

/// Per-variant stage tables: four stages of two blocks, each block two
/// units; the first block of stages 2-4 downsamples with stride 2.
type StageTable = [[[Unit; 2]; 2]; 4];

fn st_stages(name: &str) -> Option<StageTable> {
    let t = |n, r, m| Triplet { n, r, m };
    match name {
        "stresnet-nano" => Some([
            [[t(64, 32, 64), t(64, 16, 64)], [t(64, 40, 64), t(64, 8, 64)]],
            [
                [t(64, 32, 128), t(128, 8, 128)],
                [t(128, 64, 128), t(128, 16, 128)],
            ],
            [
                [t(128, 48, 256), t(256, 16, 256)],
                [t(256, 48, 256), t(256, 8, 256)],
            ],
            [
                [t(256, 32, 512), t(512, 8, 512)],
                [t(512, 48, 512), t(512, 8, 512)],
            ],
        ]),
        "stresnet-micro" => Some([
            [
                [t(64, 64, 64), t(64, 64, 64)],
                [t(64, 64, 64), t(64, 64, 64)],
            ],
            [
                [t(64, 40, 128), t(128, 32, 128)],
                [t(128, 88, 128), t(128, 32, 128)],
            ],
            [
                [t(128, 88, 256), t(256, 72, 256)],
                [t(256, 80, 256), t(256, 32, 256)],
            ],
            [
                [t(256, 80, 512), t(512, 8, 512)],
                [t(512, 72, 512), t(512, 64, 512)],
            ],
        ]),
        "stresnet-pico" => Some([
            [[t(64, 24, 64), t(64, 16, 64)], [t(64, 24, 64), t(64, 8, 64)]],
            [
                [t(64, 24, 128), t(128, 8, 128)],
                [t(128, 8, 128), t(128, 8, 128)],
            ],
            [
                [t(128, 8, 256), t(256, 8, 256)],
                [t(256, 8, 256), t(256, 8, 256)],
            ],
            [
                [t(256, 8, 512), t(512, 8, 512)],
                [t(512, 8, 512), t(512, 8, 512)],
            ],
        ]),
        "stresnet-tiny" => Some([
            [
                [Full { n: 64, m: 64 }, Full { n: 64, m: 64 }],
                [Full { n: 64, m: 64 }, Full { n: 64, m: 64 }],
            ],
            [
                [Full { n: 64, m: 128 }, t(128, 96, 128)],
                [Full { n: 128, m: 128 }, t(128, 80, 128)],
            ],
            [
                [Full { n: 128, m: 256 }, t(256, 192, 256)],
                [Full { n: 256, m: 256 }, t(256, 96, 256)],
            ],
            [
                [t(256, 208, 512), t(512, 88, 512)],
                [t(512, 192, 512), t(512, 112, 512)],
            ],
        ]),
        _ => None,
    }
}

/// Build one of the named architectures.
pub fn build_preset(name: &str) -> Result<ModelGraph, ModelError> {
    match name {
        "resnet18" => build_resnet18(),
        other => match st_stages(other) {
            Some(stages) => build_stresnet(other, stages),
            None => Err(ModelError::UnknownPreset(name.to_string())),
        },
    }
}

fn build_resnet18() -> Result<ModelGraph, ModelError> {
    let mut b = Builder::new("resnet18", [3, 224, 224]);
    let stem = b.conv("conv1", 3, 64, 7, 2, 3, false, "input");
    let mut prev = b.maxpool("pool1", 64, 3, 2, 1, &stem);
    let channels = [64usize, 128, 256, 512];
    let mut in_c = 64;
    for (stage, &out_c) in channels.iter().enumerate() {
        let s = stage + 1;
        for block in 1..=2 {
            let stride = if stage > 0 && block == 1 { 2 } else { 1 };
            let n = if block == 1 { in_c } else { out_c };
            prev = b.block(
                &format!("l{s}b{block}"),
                [Full { n, m: out_c }, Full { n: out_c, m: out_c }],
                stride,
                true,
                &prev,
            );
        }
        in_c = out_c;
    }
    b.head(&prev, 512);
    b.finish()
}

fn build_stresnet(name: &str, stages: StageTable) -> Result<ModelGraph, ModelError> {
    // Stem per the tables: 1x1/3->3, 7x7 s2 (16 wide for Tiny, 8
    // otherwise), 1x1->32, projection 1x1 32->64, then a 3x3/2 pool
    // to reach the same /4 resolution as the reference stem.
    let preset: &'static str = PRESET_NAMES
        .iter()
        .find(|&&p| p == name)
        .copied()
        .expect("caller checked the name");
    let c7 = if name == "stresnet-tiny" { 16 } else { 8 };
    let mut b = Builder::new(preset, [3, 224, 224]);
    let s1 = b.conv("stem_a", 3, 3, 1, 1, 0, false, "input");
    let s2 = b.conv("stem_b", 3, c7, 7, 2, 3, false, &s1);
    let s3 = b.conv("stem_c", c7, 32, 1, 1, 0, false, &s2);
    let proj = b.conv("stem_proj", 32, 64, 1, 1, 0, false, &s3);
    let mut prev = b.maxpool("pool1", 64, 3, 2, 1, &proj);
    for (stage, blocks) in stages.iter().enumerate() {
        let s = stage + 1;
        for (bi, units) in blocks.iter().enumerate() {
            let stride = if stage > 0 && bi == 0 { 2 } else { 1 };
            prev = b.block(&format!("l{s}b{}", bi + 1), *units, stride, false, &prev);
        }
    }
    b.head(&prev, 512);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(matches!(
            build_preset("stresnet-milli"),
            Err(ModelError::UnknownPreset(_))
        ));
    }

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let graph = build_preset(name).unwrap();
            graph.validate().unwrap();
        }
    }

    #[test]
    fn resnet18_layer2_block1_shape() {
        let graph = build_preset("resnet18").unwrap();
        let c1 = graph.layer("l2b1c1").unwrap();
        assert_eq!((c1.in_channels, c1.out_channels, c1.k(), c1.stride), (64, 128, 3, 2));
        let c2 = graph.layer("l2b1c2").unwrap();
        assert_eq!((c2.in_channels, c2.out_channels, c2.stride), (128, 128, 1));
        assert!(graph.layer("l2b1_down").is_some());
    }

    #[test]
    fn nano_layer1_block1_first_triplet() {
        let graph = build_preset("stresnet-nano").unwrap();
        let a = graph.layer("l1b1c1_a").unwrap();
        let b = graph.layer("l1b1c1_b").unwrap();
        let c = graph.layer("l1b1c1_c").unwrap();
        assert_eq!((a.in_channels, a.out_channels, a.k()), (64, 32, 1));
        assert_eq!((b.in_channels, b.out_channels, b.k()), (32, 32, 3));
        assert_eq!((c.in_channels, c.out_channels, c.k()), (32, 64, 1));
    }

    #[test]
    fn pico_layer4_uses_rank8_cores_throughout() {
        let graph = build_preset("stresnet-pico").unwrap();
        let cores: Vec<&LayerSpec> = graph
            .layers
            .iter()
            .filter(|l| l.id.starts_with("l4") && l.id.ends_with("_b"))
            .collect();
        assert_eq!(cores.len(), 4);
        for core in cores {
            assert_eq!((core.in_channels, core.out_channels, core.k()), (8, 8, 3));
        }
    }

    #[test]
    fn st_stride2_lands_on_first_triplet_core() {
        let graph = build_preset("stresnet-nano").unwrap();
        let core = graph.layer("l2b1c1_b").unwrap();
        assert_eq!(core.stride, 2);
        let reduce = graph.layer("l2b1c1_a").unwrap();
        assert_eq!(reduce.stride, 1);
    }

    #[test]
    fn stage_channel_signatures() {
        for name in PRESET_NAMES {
            let graph = build_preset(name).unwrap();
            let shapes = graph.validate().unwrap();
            // Stage outputs are the last unit of block 2 per stage.
            let expected = [64usize, 128, 256, 512];
            for (stage, want) in expected.iter().enumerate() {
                let s = stage + 1;
                let out_id = ["l", &s.to_string(), "b2_add"].concat();
                let channels = if let Some(shape) = shapes.get(&out_id) {
                    shape[0]
                } else {
                    // Shortcut-free transition blocks end at the unit itself.
                    let alt = graph
                        .layers
                        .iter()
                        .rfind(|l| l.id.starts_with(&format!("l{s}b2")))
                        .unwrap();
                    shapes[&alt.id][0]
                };
                assert_eq!(channels, *want, "{name} stage {s}");
            }
        }
    }

    #[test]
    fn decomposable_flags_cover_exactly_the_3x3_stage_convs() {
        let graph = build_preset("stresnet-micro").unwrap();
        for layer in &graph.layers {
            let expect = layer.kind == LayerKind::Conv && layer.k() == 3;
            assert_eq!(layer.decomposable, expect, "{}", layer.id);
        }
        // 16 decomposed cores: 4 stages x 2 blocks x 2 units.
        let count = graph.layers.iter().filter(|l| l.decomposable).count();
        assert_eq!(count, 16);
    }

    #[test]
    fn param_counts_match_published_figures() {
        let cases: [(&str, f64, f64); 5] = [
            ("resnet18", 11.68e6, 0.005),
            ("stresnet-tiny", 3.99e6, 0.10),
            ("stresnet-micro", 1.50e6, 0.10),
            ("stresnet-nano", 0.95e6, 0.10),
            ("stresnet-pico", 0.62e6, 0.10),
        ];
        for (name, expected, tol) in cases {
            let params = build_preset(name).unwrap().param_count() as f64;
            let rel = (params - expected).abs() / expected;
            assert!(
                rel <= tol,
                "{name}: {params} vs {expected} (rel {rel:.4}, tol {tol})"
            );
        }
    }
}
