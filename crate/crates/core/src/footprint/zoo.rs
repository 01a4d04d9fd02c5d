//! Builders for the reference residual networks.
//!
//! - ResNet-20 (CIFAR-10, 32×32 input): three stages of three basic blocks
//!   at 16/32/64 maps. Shortcuts are parameter-free identities, zero-padded
//!   and subsampled where the shape changes.
//! - ResNet-18/34 (ImageNet, 224×224 input): basic blocks.
//! - ResNet-50: bottleneck blocks with the stride on the 3×3 convolution.
//!
//! ImageNet shortcuts are 1×1 projections wherever the stride or the map
//! count changes. Every convolution is followed by batch normalization and
//! has no bias; the final affine layer has one.

use super::spec::{ArchitectureSpec, LayerKind, LayerSpec, PoolType, WeightQuant};

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn push(&mut self, name: String, kind: LayerKind, i: usize, o: usize, hw: usize, f: usize, stride: usize) {
        self.layers.push(LayerSpec {
            name: Some(name),
            kind,
            input_maps: i,
            output_maps: o,
            map_size: [hw, hw],
            filter_size: [f, f],
            stride,
            activation_bits: 32,
            weight_quant: WeightQuant::None,
            pool_type: None,
            bias: false,
        });
    }

    fn conv_bn(&mut self, name: &str, i: usize, o: usize, hw: usize, f: usize, stride: usize) {
        self.push(name.to_string(), LayerKind::Conv2d, i, o, hw, f, stride);
        self.push(format!("{name}_bn"), LayerKind::Bn, o, o, hw, 1, 1);
    }

    fn add(&mut self, name: &str, maps: usize, hw: usize) {
        self.push(format!("{name}_add"), LayerKind::Add, maps, maps, hw, 1, 1);
    }

    fn pool(&mut self, name: &str, maps: usize, hw: usize, f: usize, stride: usize, t: PoolType) {
        self.push(name.to_string(), LayerKind::Pool, maps, maps, hw, f, stride);
        self.layers.last_mut().expect("just pushed").pool_type = Some(t);
    }

    fn fc(&mut self, i: usize, o: usize) {
        self.push("fc".into(), LayerKind::Affine, i, o, 1, 1, 1);
        self.layers.last_mut().expect("just pushed").bias = true;
    }

    fn finish(self, name: &str, input: [usize; 3]) -> ArchitectureSpec {
        ArchitectureSpec {
            name: name.into(),
            input,
            layers: self.layers,
        }
    }
}

pub fn resnet20() -> ArchitectureSpec {
    let mut b = Builder { layers: Vec::new() };
    b.conv_bn("conv1", 3, 16, 32, 3, 1);
    let (mut maps, mut hw) = (16, 32);
    for (stage, width) in [16, 32, 64].into_iter().enumerate() {
        for block in 0..3 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let out_hw = hw / stride;
            let name = format!("s{}b{}", stage + 1, block + 1);
            b.conv_bn(&format!("{name}_conv1"), maps, width, out_hw, 3, stride);
            b.conv_bn(&format!("{name}_conv2"), width, width, out_hw, 3, 1);
            b.add(&name, width, out_hw);
            maps = width;
            hw = out_hw;
        }
    }
    b.pool("avgpool", maps, 1, hw, hw, PoolType::Avg);
    b.fc(maps, 10);
    b.finish("resnet20", [3, 32, 32])
}

fn imagenet(name: &str, blocks: [usize; 4], bottleneck: bool) -> ArchitectureSpec {
    let mut b = Builder { layers: Vec::new() };
    b.conv_bn("conv1", 3, 64, 112, 7, 2);
    b.pool("maxpool", 64, 56, 3, 2, PoolType::Max);
    let (mut maps, mut hw) = (64, 56);
    for (stage, (&n, width)) in blocks.iter().zip([64, 128, 256, 512]).enumerate() {
        for block in 0..n {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let out_hw = hw / stride;
            let tag = format!("s{}b{}", stage + 1, block + 1);
            let out = if bottleneck {
                let out = 4 * width;
                b.conv_bn(&format!("{tag}_conv1"), maps, width, hw, 1, 1);
                b.conv_bn(&format!("{tag}_conv2"), width, width, out_hw, 3, stride);
                b.conv_bn(&format!("{tag}_conv3"), width, out, out_hw, 1, 1);
                out
            } else {
                b.conv_bn(&format!("{tag}_conv1"), maps, width, out_hw, 3, stride);
                b.conv_bn(&format!("{tag}_conv2"), width, width, out_hw, 3, 1);
                width
            };
            if stride != 1 || maps != out {
                b.conv_bn(&format!("{tag}_proj"), maps, out, out_hw, 1, stride);
            }
            b.add(&tag, out, out_hw);
            maps = out;
            hw = out_hw;
        }
    }
    b.pool("avgpool", maps, 1, hw, hw, PoolType::Avg);
    b.fc(maps, 1000);
    b.finish(name, [3, 224, 224])
}

pub fn resnet18() -> ArchitectureSpec {
    imagenet("resnet18", [2, 2, 2, 2], false)
}

pub fn resnet34() -> ArchitectureSpec {
    imagenet("resnet34", [3, 4, 6, 3], false)
}

pub fn resnet50() -> ArchitectureSpec {
    imagenet("resnet50", [3, 4, 6, 3], true)
}

/// Built-in architecture by name.
pub fn by_name(name: &str) -> Option<ArchitectureSpec> {
    match name {
        "resnet20" => Some(resnet20()),
        "resnet18" => Some(resnet18()),
        "resnet34" => Some(resnet34()),
        "resnet50" => Some(resnet50()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["resnet20", "resnet18", "resnet34", "resnet50"];
