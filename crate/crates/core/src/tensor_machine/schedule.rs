use super::{MemoryTier, OpNode, Schedule, TensorRef, TensorRole, TmTensor};
use crate::error::{Error, Result};
use crate::model::{Activation, BlockKind, BlockSpec, ExecutionScheme, TensorDims};

/// Knobs for schedule construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleOptions {
    /// Hidden channels processed per loop iteration; `None` picks
    /// [`default_chunk`].
    pub chunk: Option<usize>,
    pub element_bytes: u32,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { chunk: None, element_bytes: 2 }
    }
}

/// Largest divisor of the hidden width that is at most 64 and, for MBConv,
/// a multiple of the group width.
pub fn default_chunk(block: &BlockSpec) -> usize {
    let hidden = block.hidden_channels().unwrap_or(block.in_channels) as usize;
    let multiple = match block.kind {
        BlockKind::MbConv { group_width, .. } => group_width.max(1) as usize,
        _ => 1,
    };
    (1..=hidden.min(64))
        .rev()
        .find(|d| hidden.is_multiple_of(*d) && d % multiple == 0)
        .unwrap_or(hidden)
}

const KERNEL: usize = 3;

struct Builder {
    tensors: Vec<TmTensor>,
    nodes: Vec<OpNode>,
    bpe: u32,
}

fn whole(name: &str) -> TensorRef {
    TensorRef::whole(name)
}

impl Builder {
    fn new(bpe: u32) -> Self {
        Self { tensors: Vec::new(), nodes: Vec::new(), bpe }
    }

    fn declare(&mut self, name: &str, shape: &[usize], tier: MemoryTier, role: TensorRole, per_iteration: bool) -> String {
        debug_assert!(self.tensors.iter().all(|t| t.name != name), "duplicate {name}");
        self.tensors.push(TmTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            tier,
            element_bytes: self.bpe,
            role,
            per_iteration,
        });
        name.to_string()
    }

    fn dram(&mut self, name: &str, shape: &[usize], role: TensorRole) -> String {
        self.declare(name, shape, MemoryTier::Dram, role, false)
    }

    fn global(&mut self, name: &str, shape: &[usize], role: TensorRole) -> String {
        self.declare(name, shape, MemoryTier::Global, role, false)
    }

    fn local(&mut self, name: &str, shape: &[usize], role: TensorRole) -> String {
        self.declare(name, shape, MemoryTier::Local, role, false)
    }

    fn shape(&self, name: &str) -> Vec<usize> {
        self.tensors.iter().find(|t| t.name == name).expect("declared").shape.clone()
    }

    /// Declare a local with the window's shape and load the window into it.
    fn load_into(&mut self, body: &mut Vec<OpNode>, src: TensorRef, dst: &str, role: TensorRole) -> String {
        let shape = src.shape(&self.shape(&src.name));
        let name = self.local(dst, &shape, role);
        body.push(OpNode::Load { src, dst: whole(&name) });
        name
    }

    /// Stage a DRAM tensor in global memory.
    fn stage(&mut self, src: &str) -> String {
        let shape = self.shape(src);
        let name = self.global(&format!("{src}.g"), &shape, TensorRole::Staging);
        self.nodes.push(OpNode::Load { src: whole(src), dst: whole(&name) });
        name
    }

    fn finish(self, name: String, output: String) -> Schedule {
        Schedule { name, tensors: self.tensors, nodes: self.nodes, output }
    }
}

fn matmul(input: &str, weight: &str, bias: Option<&str>, output: &str, accumulate: bool) -> OpNode {
    OpNode::ChannelsModeMatmul {
        input: input.into(),
        weight: whole(weight),
        bias: bias.map(whole),
        output: output.into(),
        accumulate,
    }
}

fn conv(input: &str, weight: &str, bias: &str, output: &str, group_width: usize) -> OpNode {
    OpNode::GroupedConv2d {
        input: input.into(),
        weight: whole(weight),
        bias: Some(whole(bias)),
        output: output.into(),
        group_width,
    }
}

fn act(func: Activation, tensor: &str) -> OpNode {
    OpNode::Activation { func, input: tensor.into(), output: tensor.into() }
}

fn add(a: &str, b: &str, output: &str) -> OpNode {
    OpNode::ElementwiseAdd { a: a.into(), b: b.into(), output: output.into() }
}

fn store(src: &str, dst: &str, accumulate: bool) -> OpNode {
    OpNode::Store { src: whole(src), dst: whole(dst), accumulate }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    hidden: usize,
    stride2: bool,
}

impl Geometry {
    fn of(block: &BlockSpec, dims: TensorDims) -> Self {
        Self {
            n: dims.batch as usize,
            h: dims.height as usize,
            w: dims.width as usize,
            c: block.in_channels as usize,
            k: block.out_channels as usize,
            hidden: block.hidden_channels().unwrap_or(0) as usize,
            stride2: block.stride == 2,
        }
    }

    fn input(&self, channels: usize) -> [usize; 4] {
        [self.n, self.h, self.w, channels]
    }

    fn post(&self, channels: usize) -> [usize; 4] {
        if self.stride2 {
            [self.n, self.h / 2, self.w / 2, channels]
        } else {
            self.input(channels)
        }
    }

    fn vector(&self, channels: usize) -> [usize; 4] {
        [self.n, 1, 1, channels]
    }
}

fn check_block(block: &BlockSpec, dims: TensorDims) -> Result<()> {
    let problems = block.violations(dims);
    if !problems.is_empty() || !dims.is_valid() {
        return Err(Error::Shape(format!("{} block at {dims}: {}", block.kind.name(), problems.join("; "))));
    }
    Ok(())
}

fn chunk_for(block: &BlockSpec, opts: &ScheduleOptions) -> Result<usize> {
    let hidden = block.hidden_channels().unwrap_or(0) as usize;
    let chunk = opts.chunk.unwrap_or_else(|| default_chunk(block));
    if chunk == 0 || chunk > hidden || !hidden.is_multiple_of(chunk) {
        return Err(Error::InvalidArgument(format!("chunk {chunk} does not divide {hidden} hidden channels")));
    }
    if let BlockKind::MbConv { group_width, .. } = block.kind {
        if !chunk.is_multiple_of(group_width as usize) {
            return Err(Error::InvalidArgument(format!("chunk {chunk} is not a multiple of group width {group_width}")));
        }
    }
    Ok(chunk)
}

/// Build the canonical schedule of an FFN, ConvFirst or MBConv block with
/// default options.
pub fn build_schedule(block: &BlockSpec, dims: TensorDims, scheme: ExecutionScheme) -> Result<Schedule> {
    build_schedule_with(block, dims, scheme, &ScheduleOptions::default())
}

pub fn build_schedule_with(block: &BlockSpec, dims: TensorDims, scheme: ExecutionScheme, opts: &ScheduleOptions) -> Result<Schedule> {
    use ExecutionScheme::{BlockFusion, LayerWise};
    if !matches!(block.kind, BlockKind::Ffn { .. } | BlockKind::ConvFirst { .. } | BlockKind::MbConv { .. }) {
        return Err(Error::Unsupported(format!("no tensor-machine schedule for {} blocks", block.kind.name())));
    }
    check_block(block, dims)?;
    let g = Geometry::of(block, dims);
    let phi = block.kind.activation();
    let mut b = Builder::new(opts.element_bytes);
    let name = format!("{}-{}", block.kind.name(), scheme.name());
    let out = match (block.kind, scheme) {
        (BlockKind::Ffn { .. }, LayerWise) => ffn_layerwise(&mut b, g, phi),
        (BlockKind::Ffn { .. }, BlockFusion) => ffn_fused(&mut b, g, phi, chunk_for(block, opts)?),
        (BlockKind::ConvFirst { group_width, .. }, LayerWise) => {
            convfirst_layerwise(&mut b, g, phi, group_width as usize, block.has_residual())
        }
        (BlockKind::ConvFirst { group_width, .. }, BlockFusion) => {
            convfirst_fused(&mut b, g, phi, group_width as usize, block.has_residual(), chunk_for(block, opts)?)
        }
        (BlockKind::MbConv { group_width, .. }, scheme) => {
            let squeeze = block.squeeze_channels().unwrap_or(0) as usize;
            let gw = group_width as usize;
            if scheme == LayerWise {
                mbconv_layerwise(&mut b, g, phi, gw, squeeze, block.has_residual())
            } else {
                mbconv_fused(&mut b, g, phi, gw, squeeze, block.has_residual(), chunk_for(block, opts)?)
            }
        }
        _ => unreachable!("filtered above"),
    };
    let schedule = b.finish(name, out);
    schedule.validate()?;
    Ok(schedule)
}

fn ffn_weights(b: &mut Builder, g: Geometry) {
    b.dram("exp.w", &[g.c, g.hidden], TensorRole::Weight);
    b.dram("exp.b", &[g.hidden], TensorRole::Weight);
    b.dram("prj.w", &[g.hidden, g.k], TensorRole::Weight);
    b.dram("prj.b", &[g.k], TensorRole::Weight);
}

fn ffn_layerwise(b: &mut Builder, g: Geometry, phi: Activation) -> String {
    b.dram("x", &g.input(g.c), TensorRole::Input);
    ffn_weights(b, g);
    b.dram("y", &g.input(g.hidden), TensorRole::Hidden);
    let out = b.dram("out", &g.input(g.k), TensorRole::Output);
    let mut nodes = Vec::new();

    b.load_into(&mut nodes, whole("x"), "exp.in", TensorRole::Staging);
    b.load_into(&mut nodes, whole("exp.w"), "exp.w.l", TensorRole::Staging);
    b.load_into(&mut nodes, whole("exp.b"), "exp.b.l", TensorRole::Staging);
    b.local("exp.out", &g.input(g.hidden), TensorRole::Hidden);
    nodes.push(matmul("exp.in", "exp.w.l", Some("exp.b.l"), "exp.out", false));
    nodes.push(act(phi, "exp.out"));
    nodes.push(store("exp.out", "y", false));

    b.load_into(&mut nodes, whole("y"), "prj.in", TensorRole::Hidden);
    b.load_into(&mut nodes, whole("prj.w"), "prj.w.l", TensorRole::Staging);
    b.load_into(&mut nodes, whole("prj.b"), "prj.b.l", TensorRole::Staging);
    b.local("prj.out", &g.input(g.k), TensorRole::Accumulator);
    nodes.push(matmul("prj.in", "prj.w.l", Some("prj.b.l"), "prj.out", false));
    nodes.push(store("prj.out", &out, false));
    b.nodes.extend(nodes);
    out
}

/// The hidden-chunk loop shared by fused FFN and ConvFirst: expand a chunk,
/// activate it and project it onto `acc`.
fn ffn_loop(b: &mut Builder, g: Geometry, phi: Activation, chunk: usize, input: &str, acc: &str) {
    let ew = b.stage("exp.w");
    let eb = b.stage("exp.b");
    let pw = b.stage("prj.w");
    let positions = b.shape(input);
    let mut body = Vec::new();
    b.load_into(&mut body, TensorRef::chunk(&ew, 1, chunk), "exp.w.l", TensorRole::Staging);
    b.load_into(&mut body, TensorRef::chunk(&eb, 0, chunk), "exp.b.l", TensorRole::Staging);
    b.local("y.l", &[positions[0], positions[1], positions[2], chunk], TensorRole::Hidden);
    body.push(matmul(input, "exp.w.l", Some("exp.b.l"), "y.l", false));
    body.push(act(phi, "y.l"));
    b.load_into(&mut body, TensorRef::chunk(&pw, 0, chunk), "prj.w.l", TensorRole::Staging);
    body.push(matmul("y.l", "prj.w.l", None, acc, true));
    b.nodes.push(OpNode::TiledLoop { trip_count: g.hidden / chunk, body });
}

fn finish_output(b: &mut Builder, acc: &str, out: &str) {
    let mut nodes = Vec::new();
    b.load_into(&mut nodes, whole("prj.b"), "prj.b.l", TensorRole::Staging);
    nodes.push(add(acc, "prj.b.l", acc));
    nodes.push(store(acc, out, false));
    b.nodes.extend(nodes);
}

fn ffn_fused(b: &mut Builder, g: Geometry, phi: Activation, chunk: usize) -> String {
    b.dram("x", &g.input(g.c), TensorRole::Input);
    ffn_weights(b, g);
    let out = b.dram("out", &g.input(g.k), TensorRole::Output);
    let mut nodes = Vec::new();
    b.load_into(&mut nodes, whole("x"), "x.l", TensorRole::Staging);
    b.nodes.extend(nodes);
    b.local("acc.l", &g.input(g.k), TensorRole::Accumulator);
    ffn_loop(b, g, phi, chunk, "x.l", "acc.l");
    finish_output(b, "acc.l", &out);
    out
}

fn convfirst_tensors(b: &mut Builder, g: Geometry, group_width: usize) -> String {
    b.dram("x", &g.input(g.c), TensorRole::Input);
    b.dram("conv.w", &[g.c, group_width, KERNEL, KERNEL], TensorRole::Weight);
    b.dram("conv.b", &[g.c], TensorRole::Weight);
    let exp_in = if g.stride2 { 2 * g.c } else { g.c };
    b.dram("exp.w", &[exp_in, g.hidden], TensorRole::Weight);
    b.dram("exp.b", &[g.hidden], TensorRole::Weight);
    b.dram("prj.w", &[g.hidden, g.k], TensorRole::Weight);
    b.dram("prj.b", &[g.k], TensorRole::Weight);
    b.dram("out", &g.post(g.k), TensorRole::Output)
}

/// Grouped conv of a local input; at stride 2 the result and the input are
/// both pooled and concatenated. Returns the name of the FFN input.
fn convfirst_conv(b: &mut Builder, nodes: &mut Vec<OpNode>, g: Geometry, group_width: usize, input: &str, prefix: &str) -> String {
    b.load_into(nodes, whole("conv.w"), &format!("{prefix}conv.w.l"), TensorRole::Staging);
    b.load_into(nodes, whole("conv.b"), &format!("{prefix}conv.b.l"), TensorRole::Staging);
    let h = b.local(&format!("{prefix}conv.out"), &g.input(g.c), TensorRole::Hidden);
    nodes.push(conv(input, &format!("{prefix}conv.w.l"), &format!("{prefix}conv.b.l"), &h, group_width));
    if !g.stride2 {
        return h;
    }
    let hd = b.local(&format!("{prefix}conv.ds"), &g.post(g.c), TensorRole::Hidden);
    let xd = b.local(&format!("{prefix}x.ds"), &g.post(g.c), TensorRole::Hidden);
    let cat = b.local(&format!("{prefix}conv.cat"), &g.post(2 * g.c), TensorRole::Hidden);
    nodes.push(OpNode::Downsample { input: h, output: hd.clone() });
    nodes.push(OpNode::Downsample { input: input.into(), output: xd.clone() });
    nodes.push(OpNode::Concat { inputs: vec![hd, xd], output: cat.clone() });
    cat
}

fn convfirst_layerwise(b: &mut Builder, g: Geometry, phi: Activation, group_width: usize, residual: bool) -> String {
    let out = convfirst_tensors(b, g, group_width);
    let exp_in = if g.stride2 { 2 * g.c } else { g.c };
    b.dram("h", &g.post(exp_in), TensorRole::Hidden);
    b.dram("y", &g.post(g.hidden), TensorRole::Hidden);
    let mut nodes = Vec::new();

    b.load_into(&mut nodes, whole("x"), "conv.in", TensorRole::Staging);
    let h = convfirst_conv(b, &mut nodes, g, group_width, "conv.in", "");
    nodes.push(store(&h, "h", false));

    b.load_into(&mut nodes, whole("h"), "exp.in", TensorRole::Hidden);
    b.load_into(&mut nodes, whole("exp.w"), "exp.w.l", TensorRole::Staging);
    b.load_into(&mut nodes, whole("exp.b"), "exp.b.l", TensorRole::Staging);
    b.local("exp.out", &g.post(g.hidden), TensorRole::Hidden);
    nodes.push(matmul("exp.in", "exp.w.l", Some("exp.b.l"), "exp.out", false));
    nodes.push(act(phi, "exp.out"));
    nodes.push(store("exp.out", "y", false));

    b.load_into(&mut nodes, whole("y"), "prj.in", TensorRole::Hidden);
    b.load_into(&mut nodes, whole("prj.w"), "prj.w.l", TensorRole::Staging);
    b.load_into(&mut nodes, whole("prj.b"), "prj.b.l", TensorRole::Staging);
    b.local("prj.out", &g.post(g.k), TensorRole::Accumulator);
    nodes.push(matmul("prj.in", "prj.w.l", Some("prj.b.l"), "prj.out", false));
    if residual {
        b.load_into(&mut nodes, whole("x"), "prj.res", TensorRole::Staging);
        nodes.push(add("prj.out", "prj.res", "prj.out"));
    }
    nodes.push(store("prj.out", &out, false));
    b.nodes.extend(nodes);
    out
}

fn convfirst_fused(b: &mut Builder, g: Geometry, phi: Activation, group_width: usize, residual: bool, chunk: usize) -> String {
    let out = convfirst_tensors(b, g, group_width);
    let mut nodes = Vec::new();
    b.load_into(&mut nodes, whole("x"), "x.l", TensorRole::Staging);
    let h = convfirst_conv(b, &mut nodes, g, group_width, "x.l", "");
    b.local("acc.l", &g.post(g.k), TensorRole::Accumulator);
    if residual {
        nodes.push(OpNode::Copy { input: "x.l".into(), output: "acc.l".into() });
    }
    b.nodes.extend(nodes);
    ffn_loop(b, g, phi, chunk, &h, "acc.l");
    finish_output(b, "acc.l", &out);
    out
}

fn mbconv_tensors(b: &mut Builder, g: Geometry, group_width: usize, squeeze: usize) -> String {
    b.dram("x", &g.input(g.c), TensorRole::Input);
    b.dram("exp.w", &[g.c, g.hidden], TensorRole::Weight);
    b.dram("exp.b", &[g.hidden], TensorRole::Weight);
    b.dram("conv.w", &[g.hidden, group_width, KERNEL, KERNEL], TensorRole::Weight);
    b.dram("conv.b", &[g.hidden], TensorRole::Weight);
    b.dram("se.sq.w", &[g.hidden, squeeze], TensorRole::Weight);
    b.dram("se.sq.b", &[squeeze], TensorRole::Weight);
    b.dram("se.ex.w", &[squeeze, g.hidden], TensorRole::Weight);
    b.dram("se.ex.b", &[g.hidden], TensorRole::Weight);
    b.dram("prj.w", &[g.hidden, g.k], TensorRole::Weight);
    b.dram("prj.b", &[g.k], TensorRole::Weight);
    b.dram("out", &g.post(g.k), TensorRole::Output)
}

fn mbconv_layerwise(b: &mut Builder, g: Geometry, phi: Activation, group_width: usize, squeeze: usize, residual: bool) -> String {
    let out = mbconv_tensors(b, g, group_width, squeeze);
    b.dram("e", &g.input(g.hidden), TensorRole::Hidden);
    b.dram("c", &g.post(g.hidden), TensorRole::Hidden);
    b.dram("s", &g.post(g.hidden), TensorRole::Hidden);
    let mut n = Vec::new();

    b.load_into(&mut n, whole("x"), "exp.in", TensorRole::Staging);
    b.load_into(&mut n, whole("exp.w"), "exp.w.l", TensorRole::Staging);
    b.load_into(&mut n, whole("exp.b"), "exp.b.l", TensorRole::Staging);
    b.local("exp.out", &g.input(g.hidden), TensorRole::Hidden);
    n.push(matmul("exp.in", "exp.w.l", Some("exp.b.l"), "exp.out", false));
    n.push(act(phi, "exp.out"));
    n.push(store("exp.out", "e", false));

    b.load_into(&mut n, whole("e"), "conv.in", TensorRole::Hidden);
    b.load_into(&mut n, whole("conv.w"), "conv.w.l", TensorRole::Staging);
    b.load_into(&mut n, whole("conv.b"), "conv.b.l", TensorRole::Staging);
    b.local("conv.out", &g.input(g.hidden), TensorRole::Hidden);
    n.push(conv("conv.in", "conv.w.l", "conv.b.l", "conv.out", group_width));
    n.push(act(phi, "conv.out"));
    let conv_out = if g.stride2 {
        b.local("conv.ds", &g.post(g.hidden), TensorRole::Hidden);
        n.push(OpNode::Downsample { input: "conv.out".into(), output: "conv.ds".into() });
        "conv.ds"
    } else {
        "conv.out"
    };
    n.push(store(conv_out, "c", false));

    b.load_into(&mut n, whole("c"), "se.in", TensorRole::Hidden);
    b.load_into(&mut n, whole("se.sq.w"), "se.sq.w.l", TensorRole::Staging);
    b.load_into(&mut n, whole("se.sq.b"), "se.sq.b.l", TensorRole::Staging);
    b.load_into(&mut n, whole("se.ex.w"), "se.ex.w.l", TensorRole::Staging);
    b.load_into(&mut n, whole("se.ex.b"), "se.ex.b.l", TensorRole::Staging);
    b.local("se.pool", &g.vector(g.hidden), TensorRole::Hidden);
    b.local("se.q", &g.vector(squeeze), TensorRole::Hidden);
    b.local("se.gate", &g.vector(g.hidden), TensorRole::Hidden);
    b.local("se.out", &g.post(g.hidden), TensorRole::Hidden);
    n.push(OpNode::GlobalAvgPool { input: "se.in".into(), output: "se.pool".into() });
    n.push(matmul("se.pool", "se.sq.w.l", Some("se.sq.b.l"), "se.q", false));
    n.push(act(Activation::Relu, "se.q"));
    n.push(matmul("se.q", "se.ex.w.l", Some("se.ex.b.l"), "se.gate", false));
    n.push(act(Activation::Sigmoid, "se.gate"));
    n.push(OpNode::ElementwiseMul { a: "se.in".into(), b: "se.gate".into(), output: "se.out".into() });
    n.push(store("se.out", "s", false));

    b.load_into(&mut n, whole("s"), "prj.in", TensorRole::Hidden);
    b.load_into(&mut n, whole("prj.w"), "prj.w.l", TensorRole::Staging);
    b.load_into(&mut n, whole("prj.b"), "prj.b.l", TensorRole::Staging);
    b.local("prj.out", &g.post(g.k), TensorRole::Accumulator);
    n.push(matmul("prj.in", "prj.w.l", Some("prj.b.l"), "prj.out", false));
    if residual {
        b.load_into(&mut n, whole("x"), "prj.res", TensorRole::Staging);
        n.push(add("prj.out", "prj.res", "prj.out"));
    }
    n.push(store("prj.out", &out, false));
    b.nodes.extend(n);
    out
}

/// Each loop iteration plays the part of one processor owning `chunk`
/// hidden channels. The squeeze vector is accumulated in global memory, all
/// processors synchronize, and each projects its gated channels onto the
/// output, which accumulates onto the staged input when the block has a
/// residual.
fn mbconv_fused(b: &mut Builder, g: Geometry, phi: Activation, group_width: usize, squeeze: usize, residual: bool, chunk: usize) -> String {
    let out = mbconv_tensors(b, g, group_width, squeeze);
    let trips = g.hidden / chunk;
    let xg = b.stage("x");
    let ew = b.stage("exp.w");
    let eb = b.stage("exp.b");
    let cw = b.stage("conv.w");
    let cb = b.stage("conv.b");
    let sqw = b.stage("se.sq.w");
    let sqb = b.stage("se.sq.b");
    let exw = b.stage("se.ex.w");
    let exb = b.stage("se.ex.b");
    let pw = b.stage("prj.w");
    let sq = b.global("se.sq.acc", &g.vector(squeeze), TensorRole::Accumulator);
    let acc = if residual { xg.clone() } else { b.global("acc.g", &g.post(g.k), TensorRole::Accumulator) };

    let mut a = Vec::new();
    b.load_into(&mut a, whole(&xg), "x.l", TensorRole::Staging);
    b.load_into(&mut a, TensorRef::chunk(&ew, 1, chunk), "exp.w.l", TensorRole::Staging);
    b.load_into(&mut a, TensorRef::chunk(&eb, 0, chunk), "exp.b.l", TensorRole::Staging);
    b.local("e.l", &g.input(chunk), TensorRole::Hidden);
    a.push(matmul("x.l", "exp.w.l", Some("exp.b.l"), "e.l", false));
    a.push(act(phi, "e.l"));
    b.load_into(&mut a, TensorRef::chunk(&cw, 0, chunk), "conv.w.l", TensorRole::Staging);
    b.load_into(&mut a, TensorRef::chunk(&cb, 0, chunk), "conv.b.l", TensorRole::Staging);
    let kept = if g.stride2 {
        b.local("c.l", &g.input(chunk), TensorRole::Hidden);
        b.declare("c.ds", &g.post(chunk), MemoryTier::Local, TensorRole::Hidden, true);
        a.push(conv("e.l", "conv.w.l", "conv.b.l", "c.l", group_width));
        a.push(act(phi, "c.l"));
        a.push(OpNode::Downsample { input: "c.l".into(), output: "c.ds".into() });
        "c.ds"
    } else {
        b.declare("c.l", &g.input(chunk), MemoryTier::Local, TensorRole::Hidden, true);
        a.push(conv("e.l", "conv.w.l", "conv.b.l", "c.l", group_width));
        a.push(act(phi, "c.l"));
        "c.l"
    };
    b.local("p.l", &g.vector(chunk), TensorRole::Hidden);
    a.push(OpNode::GlobalAvgPool { input: kept.into(), output: "p.l".into() });
    b.load_into(&mut a, TensorRef::chunk(&sqw, 0, chunk), "se.sq.w.l", TensorRole::Staging);
    b.local("q.l", &g.vector(squeeze), TensorRole::Accumulator);
    a.push(matmul("p.l", "se.sq.w.l", None, "q.l", false));
    a.push(store("q.l", &sq, true));
    b.nodes.push(OpNode::TiledLoop { trip_count: trips, body: a });
    b.nodes.push(OpNode::Barrier);

    let mut c = Vec::new();
    b.load_into(&mut c, whole(&sq), "sq.l", TensorRole::Staging);
    b.load_into(&mut c, whole(&sqb), "se.sq.b.l", TensorRole::Staging);
    c.push(add("sq.l", "se.sq.b.l", "sq.l"));
    c.push(act(Activation::Relu, "sq.l"));
    b.load_into(&mut c, TensorRef::chunk(&exw, 1, chunk), "se.ex.w.l", TensorRole::Staging);
    b.load_into(&mut c, TensorRef::chunk(&exb, 0, chunk), "se.ex.b.l", TensorRole::Staging);
    b.local("gate.l", &g.vector(chunk), TensorRole::Hidden);
    c.push(matmul("sq.l", "se.ex.w.l", Some("se.ex.b.l"), "gate.l", false));
    c.push(act(Activation::Sigmoid, "gate.l"));
    b.local("gated.l", &g.post(chunk), TensorRole::Hidden);
    c.push(OpNode::ElementwiseMul { a: kept.into(), b: "gate.l".into(), output: "gated.l".into() });
    b.load_into(&mut c, TensorRef::chunk(&pw, 0, chunk), "prj.w.l", TensorRole::Staging);
    b.local("part.l", &g.post(g.k), TensorRole::Accumulator);
    c.push(matmul("gated.l", "prj.w.l", None, "part.l", false));
    c.push(store("part.l", &acc, true));
    b.nodes.push(OpNode::TiledLoop { trip_count: trips, body: c });

    let mut n = Vec::new();
    b.load_into(&mut n, whole(&acc), "o.l", TensorRole::Accumulator);
    b.nodes.extend(n);
    finish_output(b, "o.l", &out);
    out
}

/// Block-fusion ConvFirst with input and output channels partitioned over
/// `processors`. Each processor convolves its input channels and
/// contributes partial sums of every hidden chunk to a global accumulator;
/// after a barrier each processor activates the chunk and projects it onto
/// its own output channels.
pub fn build_scaled_schedule(block: &BlockSpec, dims: TensorDims, processors: usize, opts: &ScheduleOptions) -> Result<Schedule> {
    let BlockKind::ConvFirst { group_width, .. } = block.kind else {
        return Err(Error::Unsupported(format!("no scaled schedule for {} blocks", block.kind.name())));
    };
    check_block(block, dims)?;
    if block.stride != 1 {
        return Err(Error::Unsupported("scaled schedule needs a stride-1 block".into()));
    }
    let g = Geometry::of(block, dims);
    let gw = group_width as usize;
    if processors == 0 || !g.c.is_multiple_of(processors * gw) || !g.k.is_multiple_of(processors) {
        return Err(Error::InvalidArgument(format!(
            "{processors} processors cannot split {} input channels in groups of {gw} and {} outputs",
            g.c, g.k
        )));
    }
    let chunk = chunk_for(block, opts)?;
    let phi = block.kind.activation();
    let mut b = Builder::new(opts.element_bytes);
    let out = convfirst_tensors(&mut b, g, gw);
    let (cp, kp) = (g.c / processors, g.k / processors);

    let mut n = Vec::new();
    for p in 0..processors {
        b.load_into(&mut n, TensorRef::part("x", 3, p * cp, cp), &format!("x.{p}"), TensorRole::Staging);
        b.load_into(&mut n, TensorRef::part("conv.w", 0, p * cp, cp), &format!("conv.w.{p}"), TensorRole::Staging);
        b.load_into(&mut n, TensorRef::part("conv.b", 0, p * cp, cp), &format!("conv.b.{p}"), TensorRole::Staging);
        b.local(&format!("h.{p}"), &g.input(cp), TensorRole::Hidden);
        n.push(conv(&format!("x.{p}"), &format!("conv.w.{p}"), &format!("conv.b.{p}"), &format!("h.{p}"), gw));
        b.local(&format!("acc.{p}"), &g.input(kp), TensorRole::Accumulator);
        if block.has_residual() {
            n.push(OpNode::Copy { input: format!("x.{p}"), output: format!("acc.{p}") });
        }
    }
    b.nodes.extend(n);
    let ew = b.stage("exp.w");
    let eb = b.stage("exp.b");
    let pw = b.stage("prj.w");
    let hs = b.declare("hidden.acc", &g.input(chunk), MemoryTier::Global, TensorRole::Accumulator, true);

    let mut body = Vec::new();
    for p in 0..processors {
        let window = TensorRef::part(&ew, 0, p * cp, cp).sliced(super::Slice { axis: 1, start: 0, step: chunk, width: chunk });
        b.load_into(&mut body, window, &format!("exp.w.{p}"), TensorRole::Staging);
        b.local(&format!("part.{p}"), &g.input(chunk), TensorRole::Accumulator);
        body.push(matmul(&format!("h.{p}"), &format!("exp.w.{p}"), None, &format!("part.{p}"), false));
        body.push(store(&format!("part.{p}"), &hs, true));
    }
    body.push(OpNode::Barrier);
    for p in 0..processors {
        let y = b.load_into(&mut body, whole(&hs), &format!("y.{p}"), TensorRole::Hidden);
        b.load_into(&mut body, TensorRef::chunk(&eb, 0, chunk), &format!("exp.b.{p}"), TensorRole::Staging);
        body.push(add(&y, &format!("exp.b.{p}"), &y));
        body.push(act(phi, &y));
        let window = TensorRef::chunk(&pw, 0, chunk).sliced(super::Slice { axis: 1, start: p * kp, step: 0, width: kp });
        b.load_into(&mut body, window, &format!("prj.w.{p}"), TensorRole::Staging);
        body.push(matmul(&y, &format!("prj.w.{p}"), None, &format!("acc.{p}"), true));
    }
    b.nodes.push(OpNode::TiledLoop { trip_count: g.hidden / chunk, body });

    let mut n = Vec::new();
    for p in 0..processors {
        b.load_into(&mut n, TensorRef::part("prj.b", 0, p * kp, kp), &format!("prj.b.{p}"), TensorRole::Staging);
        n.push(add(&format!("acc.{p}"), &format!("prj.b.{p}"), &format!("acc.{p}")));
        n.push(OpNode::Store { src: whole(&format!("acc.{p}")), dst: TensorRef::part(&out, 3, p * kp, kp), accumulate: false });
    }
    b.nodes.extend(n);
    let schedule = b.finish(format!("convfirst-scaled-{processors}"), out);
    schedule.validate()?;
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mbconv(c: u32) -> BlockSpec {
        BlockSpec::new(BlockKind::MbConv { group_width: 8, expansion: 4, se_ratio: 0.25, activation: Activation::Silu }, c, c, 1)
    }

    #[test]
    fn chunk_respects_group_width() {
        assert_eq!(default_chunk(&mbconv(16)), 64);
        assert_eq!(default_chunk(&mbconv(18)), 24);
        let ffn = BlockSpec::new(BlockKind::Ffn { expansion: 6, activation: Activation::Relu }, 16, 16, 1);
        assert_eq!(default_chunk(&ffn), 48);
    }

    #[test]
    fn plain_conv_is_unsupported() {
        let block = BlockSpec::new(
            BlockKind::PlainConv { kernel: 3, group_width: None, has_bias: false, activation: Activation::Relu },
            8,
            8,
            1,
        );
        let err = build_schedule(&block, TensorDims::new(1, 4, 4, 8), ExecutionScheme::BlockFusion).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn bad_chunk_is_rejected() {
        let opts = ScheduleOptions { chunk: Some(12), ..Default::default() };
        assert!(build_schedule_with(&mbconv(16), TensorDims::new(1, 4, 4, 16), ExecutionScheme::BlockFusion, &opts).is_err());
    }

    #[test]
    fn schedules_round_trip_through_json() {
        let s = build_schedule(&mbconv(16), TensorDims::new(1, 4, 4, 16), ExecutionScheme::BlockFusion).unwrap();
        assert_eq!(Schedule::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}
