use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OpNode, Schedule, Slice, TensorRef, TensorRole, TmTensor};
use crate::error::{Error, Result};
use crate::num::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![S::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("{} values do not fill shape {:?}", data.len(), shape)));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `max |a − b| / max |reference|`.
pub fn relative_error<S: Real>(value: &Tensor<S>, reference: &Tensor<S>) -> Result<f64> {
    if value.shape != reference.shape {
        return Err(Error::Shape(format!("{:?} vs {:?}", value.shape, reference.shape)));
    }
    let diff = value
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .fold(0.0, f64::max);
    let scale = reference.max_abs();
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

/// Values for a schedule's input and weight tensors, by name.
pub type Inputs<S> = HashMap<String, Tensor<S>>;

/// Uniform random values for every input and weight tensor: activations in
/// `[-1, 1]`, weights scaled by `1/sqrt(fan_in)`, biases in `[-0.1, 0.1]`.
pub fn random_inputs<S: Real>(schedule: &Schedule, seed: u64) -> Inputs<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HashMap::new();
    for t in &schedule.tensors {
        let scale = match (t.role, t.shape.len()) {
            (TensorRole::Input, _) => 1.0,
            (TensorRole::Weight, 1) => 0.1,
            (TensorRole::Weight, 2) => 1.0 / (t.shape[0] as f64).sqrt(),
            (TensorRole::Weight, 4) => 1.0 / ((t.shape[1] * t.shape[2] * t.shape[3]) as f64).sqrt(),
            (TensorRole::Weight, _) => 1.0,
            _ => continue,
        };
        let data = (0..t.elements()).map(|_| S::of_f64(rng.gen_range(-1.0..=1.0) * scale)).collect();
        out.insert(t.name.clone(), Tensor { shape: t.shape.clone(), data });
    }
    out
}

struct Machine<'a, S> {
    table: HashMap<&'a str, &'a TmTensor>,
    values: HashMap<(&'a str, usize), Tensor<S>>,
    iteration: Option<usize>,
}

type Step<T> = std::result::Result<T, String>;

impl<'a, S: Real> Machine<'a, S> {
    fn instance(&self, name: &str) -> usize {
        match (self.table.get(name), self.iteration) {
            (Some(t), Some(i)) if t.per_iteration => i,
            _ => 0,
        }
    }

    fn key(&self, name: &'a str) -> (&'a str, usize) {
        (name, self.instance(name))
    }

    fn get(&self, name: &'a str) -> Step<&Tensor<S>> {
        self.values.get(&self.key(name)).ok_or_else(|| format!("`{name}` has no value"))
    }

    fn windows(&self, r: &TensorRef) -> Vec<(usize, usize, usize)> {
        let it = self.iteration.unwrap_or(0);
        r.slices.iter().map(|&Slice { axis, start, step, width }| (axis, start + step * it, width)).collect()
    }

    fn read(&self, r: &'a TensorRef) -> Step<Tensor<S>> {
        let src = self.get(&r.name)?;
        if r.slices.is_empty() {
            return Ok(src.clone());
        }
        let mut shape = src.shape.clone();
        let mut offset = vec![0; shape.len()];
        for (axis, start, width) in self.windows(r) {
            if start + width > shape[axis] {
                return Err(format!("window of `{}` out of bounds", r.name));
            }
            offset[axis] = start;
            shape[axis] = width;
        }
        let mut out = Tensor::zeros(&shape);
        let src_strides = src.strides();
        for_each_index(&shape, |lin, idx| {
            let at: usize = idx.iter().zip(&offset).zip(&src_strides).map(|((i, o), s)| (i + o) * s).sum();
            out.data[lin] = src.data[at];
        });
        Ok(out)
    }

    fn write(&mut self, r: &'a TensorRef, value: Tensor<S>, accumulate: bool) -> Step<()> {
        let declared = self.table.get(r.name.as_str()).ok_or_else(|| format!("unknown tensor `{}`", r.name))?;
        let key = self.key(&r.name);
        if r.slices.is_empty() && !accumulate {
            if value.shape != declared.shape {
                return Err(format!("value of shape {:?} written to `{}` of shape {:?}", value.shape, r.name, declared.shape));
            }
            self.values.insert(key, value);
            return Ok(());
        }
        let windows = self.windows(r);
        let dst = self.values.entry(key).or_insert_with(|| Tensor::zeros(&declared.shape));
        let mut shape = dst.shape.clone();
        let mut offset = vec![0; shape.len()];
        for (axis, start, width) in windows {
            if start + width > shape[axis] {
                return Err(format!("window of `{}` out of bounds", r.name));
            }
            offset[axis] = start;
            shape[axis] = width;
        }
        if shape != value.shape {
            return Err(format!("value of shape {:?} written to a {:?} window of `{}`", value.shape, shape, r.name));
        }
        let dst_strides = strides(&dst.shape);
        for_each_index(&shape, |lin, idx| {
            let at: usize = idx.iter().zip(&offset).zip(&dst_strides).map(|((i, o), s)| (i + o) * s).sum();
            dst.data[at] = if accumulate { dst.data[at] + value.data[lin] } else { value.data[lin] };
        });
        Ok(())
    }

    fn set(&mut self, name: &'a str, value: Tensor<S>) -> Step<()> {
        let declared = self.table.get(name).ok_or_else(|| format!("unknown tensor `{name}`"))?;
        if value.shape != declared.shape {
            return Err(format!("result of shape {:?} does not match `{name}` of shape {:?}", value.shape, declared.shape));
        }
        let key = self.key(name);
        self.values.insert(key, value);
        Ok(())
    }

    fn run(&mut self, node: &'a OpNode) -> Step<()> {
        match node {
            OpNode::TiledLoop { trip_count, body } => {
                for i in 0..*trip_count {
                    self.iteration = Some(i);
                    for (j, inner) in body.iter().enumerate() {
                        self.run(inner).map_err(|m| format!("iteration {i}, body node {j} ({}): {m}", inner.name()))?;
                    }
                }
                self.iteration = None;
            }
            OpNode::Barrier => {}
            OpNode::Load { src, dst } => {
                let v = self.read(src)?;
                self.write(dst, v, false)?;
            }
            OpNode::Store { src, dst, accumulate } => {
                let v = self.read(src)?;
                self.write(dst, v, *accumulate)?;
            }
            OpNode::ChannelsModeMatmul { input, weight, bias, output, accumulate } => {
                let x = self.get(input)?;
                let w = self.read(weight)?;
                let b = bias.as_ref().map(|b| self.read(b)).transpose()?;
                let mut y = matmul(x, &w, b.as_ref())?;
                if *accumulate {
                    if let Ok(prev) = self.get(output) {
                        if prev.shape != y.shape {
                            return Err(format!("accumulator `{output}` has shape {:?}", prev.shape));
                        }
                        for (a, p) in y.data.iter_mut().zip(&prev.data) {
                            *a = *p + *a;
                        }
                    }
                }
                self.set(output, y)?;
            }
            OpNode::GroupedConv2d { input, weight, bias, output, group_width } => {
                let x = self.get(input)?;
                let w = self.read(weight)?;
                let b = bias.as_ref().map(|b| self.read(b)).transpose()?;
                let y = grouped_conv(x, &w, b.as_ref(), *group_width)?;
                self.set(output, y)?;
            }
            OpNode::ElementwiseMul { a, b, output } => {
                let y = broadcast(self.get(a)?, self.get(b)?, |x, y| x * y)?;
                self.set(output, y)?;
            }
            OpNode::ElementwiseAdd { a, b, output } => {
                let y = broadcast(self.get(a)?, self.get(b)?, |x, y| x + y)?;
                self.set(output, y)?;
            }
            OpNode::Activation { func, input, output } => {
                let mut y = self.get(input)?.clone();
                for v in &mut y.data {
                    *v = S::of_f64(func.apply(v.as_f64()));
                }
                self.set(output, y)?;
            }
            OpNode::GlobalAvgPool { input, output } => {
                let y = pool(self.get(input)?)?;
                self.set(output, y)?;
            }
            OpNode::Downsample { input, output } => {
                let y = downsample(self.get(input)?)?;
                self.set(output, y)?;
            }
            OpNode::Concat { inputs, output } => {
                let parts = inputs.iter().map(|n| self.get(n)).collect::<Step<Vec<_>>>()?;
                let y = concat(&parts)?;
                self.set(output, y)?;
            }
            OpNode::Copy { input, output } => {
                let y = self.get(input)?.clone();
                self.set(output, y)?;
            }
        }
        Ok(())
    }
}

fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    for lin in 0..total {
        f(lin, &idx);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

fn nhwc<S>(t: &Tensor<S>, what: &str) -> Step<(usize, usize, usize, usize)> {
    match t.shape[..] {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(format!("{what} must be NHWC, got {:?}", t.shape)),
    }
}

fn matmul<S: Real>(x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>) -> Step<Tensor<S>> {
    let (n, h, wd, c) = nhwc(x, "matmul input")?;
    let [cin, cout] = w.shape[..] else { return Err(format!("matmul weight must be 2-d, got {:?}", w.shape)) };
    if cin != c {
        return Err(format!("matmul input has {c} channels, weight expects {cin}"));
    }
    if let Some(b) = bias {
        if b.shape != [cout] {
            return Err(format!("bias shape {:?} does not match {cout} outputs", b.shape));
        }
    }
    let positions = n * h * wd;
    let mut out = Tensor::zeros(&[n, h, wd, cout]);
    for p in 0..positions {
        let row = &x.data[p * c..(p + 1) * c];
        for o in 0..cout {
            let mut acc = 0.0f64;
            for (i, xv) in row.iter().enumerate() {
                acc += xv.as_f64() * w.data[i * cout + o].as_f64();
            }
            if let Some(b) = bias {
                acc += b.data[o].as_f64();
            }
            out.data[p * cout + o] = S::of_f64(acc);
        }
    }
    Ok(out)
}

fn grouped_conv<S: Real>(x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>, group_width: usize) -> Step<Tensor<S>> {
    let (n, h, wd, c) = nhwc(x, "conv input")?;
    let [k, t, r, s] = w.shape[..] else { return Err(format!("conv weight must be 4-d, got {:?}", w.shape)) };
    if t != group_width || group_width == 0 || c % group_width != 0 {
        return Err(format!("group width {group_width} incompatible with {c} channels and weight {:?}", w.shape));
    }
    let groups = c / group_width;
    if k % groups != 0 {
        return Err(format!("{groups} groups do not divide {k} outputs"));
    }
    let per_group = k / groups;
    let (ph, pw) = (r / 2, s / 2);
    let mut out = Tensor::zeros(&[n, h, wd, k]);
    for b in 0..n {
        for y in 0..h {
            for xpos in 0..wd {
                for o in 0..k {
                    let g = o / per_group;
                    let mut acc = bias.map_or(0.0, |bv| bv.data[o].as_f64());
                    for dy in 0..r {
                        let iy = y as isize + dy as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..s {
                            let ix = xpos as isize + dx as isize - pw as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let base = ((b * h + iy as usize) * wd + ix as usize) * c + g * group_width;
                            for ci in 0..group_width {
                                acc += x.data[base + ci].as_f64() * w.data[((o * t + ci) * r + dy) * s + dx].as_f64();
                            }
                        }
                    }
                    out.data[((b * h + y) * wd + xpos) * k + o] = S::of_f64(acc);
                }
            }
        }
    }
    Ok(out)
}

fn broadcast<S: Real>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Step<Tensor<S>> {
    let mut out = a.clone();
    if a.shape == b.shape {
        for (o, v) in out.data.iter_mut().zip(&b.data) {
            *o = f(*o, *v);
        }
        return Ok(out);
    }
    let (n, h, w, c) = nhwc(a, "elementwise operand")?;
    let per_image = match b.shape[..] {
        [bc] if bc == c => false,
        [bn, 1, 1, bc] if bn == n && bc == c => true,
        _ => return Err(format!("cannot broadcast {:?} onto {:?}", b.shape, a.shape)),
    };
    for img in 0..n {
        for p in 0..h * w {
            for ch in 0..c {
                let at = (img * h * w + p) * c + ch;
                let bv = if per_image { b.data[img * c + ch] } else { b.data[ch] };
                out.data[at] = f(out.data[at], bv);
            }
        }
    }
    Ok(out)
}

fn pool<S: Real>(x: &Tensor<S>) -> Step<Tensor<S>> {
    let (n, h, w, c) = nhwc(x, "pool input")?;
    let mut out = Tensor::zeros(&[n, 1, 1, c]);
    for img in 0..n {
        for ch in 0..c {
            let sum: f64 = (0..h * w).map(|p| x.data[(img * h * w + p) * c + ch].as_f64()).sum();
            out.data[img * c + ch] = S::of_f64(sum / (h * w) as f64);
        }
    }
    Ok(out)
}

fn downsample<S: Real>(x: &Tensor<S>) -> Step<Tensor<S>> {
    let (n, h, w, c) = nhwc(x, "downsample input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(format!("cannot downsample odd extent {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    for img in 0..n {
        for y in 0..oh {
            for xp in 0..ow {
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| x.data[((img * h + yy) * w + xx) * c + ch].as_f64();
                    let v = (at(2 * y, 2 * xp) + at(2 * y, 2 * xp + 1) + at(2 * y + 1, 2 * xp) + at(2 * y + 1, 2 * xp + 1)) / 4.0;
                    out.data[((img * oh + y) * ow + xp) * c + ch] = S::of_f64(v);
                }
            }
        }
    }
    Ok(out)
}

fn concat<S: Real>(parts: &[&Tensor<S>]) -> Step<Tensor<S>> {
    let first = parts.first().ok_or("concat of nothing")?;
    let (n, h, w, _) = nhwc(first, "concat operand")?;
    let mut widths = Vec::new();
    for p in parts {
        let (pn, ph, pw, pc) = nhwc(p, "concat operand")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(format!("cannot concatenate {:?} with {:?}", p.shape, first.shape));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[n, h, w, total]);
    for pos in 0..n * h * w {
        let mut at = pos * total;
        for (p, &pc) in parts.iter().zip(&widths) {
            out.data[at..at + pc].copy_from_slice(&p.data[pos * pc..(pos + 1) * pc]);
            at += pc;
        }
    }
    Ok(out)
}

/// Run a schedule and return its output tensor.
///
/// Every input and weight tensor must be supplied with its declared shape.
/// Errors name the top-level node that failed.
pub fn execute_numeric<S: Real>(schedule: &Schedule, inputs: &Inputs<S>) -> Result<Tensor<S>> {
    schedule.validate()?;
    let mut machine = Machine {
        table: schedule.tensors.iter().map(|t| (t.name.as_str(), t)).collect(),
        values: HashMap::new(),
        iteration: None,
    };
    for t in &schedule.tensors {
        if matches!(t.role, TensorRole::Input | TensorRole::Weight) {
            let v = inputs
                .get(&t.name)
                .ok_or_else(|| Error::InvalidArgument(format!("no value supplied for `{}`", t.name)))?;
            if v.shape != t.shape {
                return Err(Error::Shape(format!("`{}` expects {:?}, got {:?}", t.name, t.shape, v.shape)));
            }
            machine.values.insert((t.name.as_str(), 0), v.clone());
        }
    }
    for (i, node) in schedule.nodes.iter().enumerate() {
        machine.run(node).map_err(|message| Error::Schedule { node: i, message })?;
    }
    machine
        .values
        .remove(&(schedule.output.as_str(), 0))
        .ok_or_else(|| Error::Schedule { node: schedule.nodes.len(), message: format!("output `{}` never written", schedule.output) })
}
