//! Built-in architectures.
//!
//! Input shapes follow the usual datasets: MNIST `1×28×28`, CIFAR `3×32×32`,
//! TinyImageNet `3×64×64`, ImageNet `3×224×224`. The JSON fixtures under
//! `fixtures/zoo/` are dumps of these builders and are checked against them
//! in tests.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::doc::{ArchDoc, KindDoc, NodeDoc, PoolDoc};
use super::{ArchGraph, Conv2d, Dense, PoolMode, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZooArch {
    Lenet300100,
    Lenet5,
    Vgg16,
    Vgg19,
    Resnet18,
    Resnet50,
    Mobilenetv2,
}

impl ZooArch {
    pub const ALL: [ZooArch; 7] = [
        ZooArch::Lenet300100,
        ZooArch::Lenet5,
        ZooArch::Vgg16,
        ZooArch::Vgg19,
        ZooArch::Resnet18,
        ZooArch::Resnet50,
        ZooArch::Mobilenetv2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ZooArch::Lenet300100 => "lenet300100",
            ZooArch::Lenet5 => "lenet5",
            ZooArch::Vgg16 => "vgg16",
            ZooArch::Vgg19 => "vgg19",
            ZooArch::Resnet18 => "resnet18",
            ZooArch::Resnet50 => "resnet50",
            ZooArch::Mobilenetv2 => "mobilenetv2",
        }
    }

    pub fn build(self) -> ArchGraph {
        match self {
            ZooArch::Lenet300100 => lenet300100(),
            ZooArch::Lenet5 => lenet5(),
            ZooArch::Vgg16 => vgg("vgg16", &VGG16, 10),
            ZooArch::Vgg19 => vgg("vgg19", &VGG19, 100),
            ZooArch::Resnet18 => resnet18(),
            ZooArch::Resnet50 => resnet50(),
            ZooArch::Mobilenetv2 => mobilenetv2(),
        }
    }
}

impl fmt::Display for ZooArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZooArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        ZooArch::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

/// Look up a zoo architecture by name (case and punctuation insensitive).
pub fn builtin_arch(name: &str) -> Result<ArchGraph> {
    Ok(name.parse::<ZooArch>()?.build())
}

/// Incremental graph construction with shape tracking.
struct Builder {
    name: String,
    nodes: Vec<NodeDoc>,
    shapes: HashMap<String, Shape>,
}

impl Builder {
    fn new(name: &str) -> Self {
        Builder {
            name: name.to_string(),
            nodes: Vec::new(),
            shapes: HashMap::new(),
        }
    }

    fn push(&mut self, id: &str, inputs: &[&str], kind: KindDoc, shape: Shape) -> String {
        self.nodes.push(NodeDoc {
            id: id.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            kind,
        });
        self.shapes.insert(id.to_string(), shape);
        id.to_string()
    }

    fn chw(&self, id: &str) -> (usize, usize, usize) {
        match self.shapes[id] {
            Shape::Spatial {
                channels,
                height,
                width,
            } => (channels, height, width),
            Shape::Flat(_) => panic!("zoo builder: `{id}` is not spatial"),
        }
    }

    fn image(&mut self, c: usize, h: usize, w: usize) -> String {
        self.push(
            "input",
            &[],
            KindDoc::Input {
                units: None,
                channels: Some(c),
                height: Some(h),
                width: Some(w),
            },
            Shape::Spatial {
                channels: c,
                height: h,
                width: w,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_g(
        &mut self,
        id: &str,
        from: &str,
        out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> String {
        let (c, h, w) = self.chw(from);
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        self.push(
            id,
            &[from],
            KindDoc::Conv2d(Conv2d {
                in_channels: c,
                out_channels: out,
                kernel_h: k,
                kernel_w: k,
                stride,
                padding,
                groups,
            }),
            Shape::Spatial {
                channels: out,
                height: oh,
                width: ow,
            },
        )
    }

    fn conv(
        &mut self,
        id: &str,
        from: &str,
        out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> String {
        self.conv_g(id, from, out, k, stride, padding, 1)
    }

    fn pool(
        &mut self,
        id: &str,
        from: &str,
        window: usize,
        stride: usize,
        padding: usize,
        mode: PoolMode,
    ) -> String {
        let (c, h, w) = self.chw(from);
        self.push(
            id,
            &[from],
            KindDoc::Pool2d(PoolDoc {
                window,
                stride: Some(stride),
                padding,
                mode,
            }),
            Shape::Spatial {
                channels: c,
                height: (h + 2 * padding - window) / stride + 1,
                width: (w + 2 * padding - window) / stride + 1,
            },
        )
    }

    fn flatten(&mut self, id: &str, from: &str) -> String {
        let n = self.shapes[from].numel();
        self.push(id, &[from], KindDoc::Flatten, Shape::Flat(n))
    }

    fn dense(&mut self, id: &str, from: &str, out: usize) -> String {
        let n = self.shapes[from].numel();
        self.push(
            id,
            &[from],
            KindDoc::Dense(Dense {
                in_units: n,
                out_units: out,
            }),
            Shape::Flat(out),
        )
    }

    fn add(&mut self, id: &str, a: &str, b: &str) -> String {
        let s = self.shapes[a];
        self.push(id, &[a, b], KindDoc::Add, s)
    }

    fn finish(mut self, from: &str) -> ArchGraph {
        let s = self.shapes[from];
        self.push("output", &[from], KindDoc::Output, s);
        ArchGraph::from_doc(ArchDoc {
            name: self.name,
            nodes: self.nodes,
        })
        .expect("zoo architectures are valid")
    }
}

fn lenet300100() -> ArchGraph {
    let mut b = Builder::new("lenet300100");
    let x = b.image(1, 28, 28);
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc1", &x, 300);
    let x = b.dense("fc2", &x, 100);
    let x = b.dense("fc3", &x, 10);
    b.finish(&x)
}

fn lenet5() -> ArchGraph {
    let mut b = Builder::new("lenet5");
    let x = b.image(3, 32, 32);
    let x = b.conv("conv1", &x, 6, 5, 1, 0);
    let x = b.pool("pool1", &x, 2, 2, 0, PoolMode::Max);
    let x = b.conv("conv2", &x, 16, 5, 1, 0);
    let x = b.pool("pool2", &x, 2, 2, 0, PoolMode::Max);
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc1", &x, 120);
    let x = b.dense("fc2", &x, 84);
    let x = b.dense("fc3", &x, 10);
    b.finish(&x)
}

/// Conv widths; `0` marks a 2×2 max pool.
const VGG16: [usize; 18] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
];
const VGG19: [usize; 21] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

fn vgg(name: &str, cfg: &[usize], classes: usize) -> ArchGraph {
    let mut b = Builder::new(name);
    let mut x = b.image(3, 32, 32);
    let (mut conv, mut pool) = (0, 0);
    for &width in cfg {
        if width == 0 {
            pool += 1;
            x = b.pool(&format!("pool{pool}"), &x, 2, 2, 0, PoolMode::Max);
        } else {
            conv += 1;
            x = b.conv(&format!("conv{conv}"), &x, width, 3, 1, 1);
        }
    }
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc1", &x, 512);
    let x = b.dense("fc2", &x, 512);
    let x = b.dense("fc3", &x, classes);
    b.finish(&x)
}

fn basic_block(b: &mut Builder, prefix: &str, x: &str, width: usize, stride: usize) -> String {
    let (c, _, _) = b.chw(x);
    let h = b.conv(&format!("{prefix}.conv1"), x, width, 3, stride, 1);
    let h = b.conv(&format!("{prefix}.conv2"), &h, width, 3, 1, 1);
    let skip = if stride != 1 || c != width {
        b.conv(&format!("{prefix}.shortcut"), x, width, 1, stride, 0)
    } else {
        x.to_string()
    };
    b.add(&format!("{prefix}.add"), &h, &skip)
}

fn resnet18() -> ArchGraph {
    let mut b = Builder::new("resnet18");
    let x = b.image(3, 64, 64);
    let mut x = b.conv("conv1", &x, 64, 3, 1, 1);
    for (stage, &(width, stride)) in [(64, 1), (128, 2), (256, 2), (512, 2)].iter().enumerate() {
        for block in 0..2 {
            let s = if block == 0 { stride } else { 1 };
            x = basic_block(&mut b, &format!("layer{}.{block}", stage + 1), &x, width, s);
        }
    }
    let (_, h, _) = b.chw(&x);
    let x = b.pool("avgpool", &x, h, h, 0, PoolMode::Avg);
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc", &x, 200);
    b.finish(&x)
}

fn bottleneck(b: &mut Builder, prefix: &str, x: &str, width: usize, stride: usize) -> String {
    let (c, _, _) = b.chw(x);
    let out = width * 4;
    let h = b.conv(&format!("{prefix}.conv1"), x, width, 1, 1, 0);
    let h = b.conv(&format!("{prefix}.conv2"), &h, width, 3, stride, 1);
    let h = b.conv(&format!("{prefix}.conv3"), &h, out, 1, 1, 0);
    let skip = if stride != 1 || c != out {
        b.conv(&format!("{prefix}.shortcut"), x, out, 1, stride, 0)
    } else {
        x.to_string()
    };
    b.add(&format!("{prefix}.add"), &h, &skip)
}

fn resnet50() -> ArchGraph {
    let mut b = Builder::new("resnet50");
    let x = b.image(3, 224, 224);
    let x = b.conv("conv1", &x, 64, 7, 2, 3);
    let mut x = b.pool("maxpool", &x, 3, 2, 1, PoolMode::Max);
    for (stage, &(width, blocks, stride)) in [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]
        .iter()
        .enumerate()
    {
        for block in 0..blocks {
            let s = if block == 0 { stride } else { 1 };
            x = bottleneck(&mut b, &format!("layer{}.{block}", stage + 1), &x, width, s);
        }
    }
    let (_, h, _) = b.chw(&x);
    let x = b.pool("avgpool", &x, h, h, 0, PoolMode::Avg);
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc", &x, 1000);
    b.finish(&x)
}

fn mobilenetv2() -> ArchGraph {
    // (expansion, out channels, repeats, first stride)
    const CFG: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut b = Builder::new("mobilenetv2");
    let x = b.image(3, 224, 224);
    let mut x = b.conv("conv1", &x, 32, 3, 2, 1);
    let mut idx = 0;
    for &(t, out, n, stride) in &CFG {
        for r in 0..n {
            let s = if r == 0 { stride } else { 1 };
            let (c, _, _) = b.chw(&x);
            let hidden = c * t;
            let p = format!("block{idx}");
            let mut h = x.clone();
            if t != 1 {
                h = b.conv(&format!("{p}.expand"), &h, hidden, 1, 1, 0);
            }
            h = b.conv_g(&format!("{p}.dw"), &h, hidden, 3, s, 1, hidden);
            h = b.conv(&format!("{p}.project"), &h, out, 1, 1, 0);
            x = if s == 1 && c == out {
                b.add(&format!("{p}.add"), &h, &x)
            } else {
                h
            };
            idx += 1;
        }
    }
    let x = b.conv("conv_last", &x, 1280, 1, 1, 0);
    let (_, h, _) = b.chw(&x);
    let x = b.pool("avgpool", &x, h, h, 0, PoolMode::Avg);
    let x = b.flatten("flatten", &x);
    let x = b.dense("fc", &x, 1000);
    b.finish(&x)
}
