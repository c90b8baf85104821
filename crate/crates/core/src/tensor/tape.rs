use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits operations in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::numeric(op, format!("non-finite value at flat index {i}"))),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Tracked tensors receive gradients in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let needs_grad = value.is_tracked();
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records an untracked copy of `value`.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.set_tracked(false);
        value.zero_grad();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Gradient accumulated on a tracked leaf by previous backward passes.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    /// Moves a value out of the tape, leaving an empty placeholder behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[var.0].value, Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Cross-correlation of `[N, C_in, H, W]` with `[C_out, C_in, kH, kW]` plus bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 || xs[1] != ks[1] || bs[0] != ks[0] {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?}, kernel {ks:?}, bias {bs:?}"),
            ));
        }
        let oh = ConvGeometry::narrow_extent(xs[2], ks[2], stride, padding);
        let ow = ConvGeometry::narrow_extent(xs[3], ks[3], stride, padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "conv2d",
                format!("{}x{} input too small for {}x{} kernel with padding {padding}, stride {stride}", xs[2], xs[3], ks[2], ks[3]),
            ));
        };
        let geom = ConvGeometry {
            batch: xs[0],
            wide_channels: xs[1],
            wide_h: xs[2],
            wide_w: xs[3],
            narrow_channels: ks[0],
            narrow_h: oh,
            narrow_w: ow,
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
        };
        let mut out = kernels::corr_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
        );
        let bias_data = self.value(bias).data();
        for sample in out.chunks_exact_mut(geom.narrow_len()) {
            for (plane, &b) in sample.chunks_exact_mut(geom.positions()).zip(bias_data) {
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
        check_finite("conv2d", &out)?;
        let value = Tensor::new(vec![geom.batch, geom.narrow_channels, oh, ow], out)?;
        let needs = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            needs,
        ))
    }

    /// Transposed convolution of `[N, C_in, H, W]` with `[C_in, C_out, kH, kW]` plus bias.
    ///
    /// Output extent is `(H - 1) * stride - 2 * padding + kH`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 || xs[1] != ks[0] || bs[0] != ks[1] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {xs:?}, kernel {ks:?}, bias {bs:?}"),
            ));
        }
        let oh = ConvGeometry::wide_extent(xs[2], ks[2], stride, padding);
        let ow = ConvGeometry::wide_extent(xs[3], ks[3], stride, padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("padding {padding} swallows the {}x{} output", xs[2], xs[3]),
            ));
        };
        let geom = ConvGeometry {
            batch: xs[0],
            wide_channels: ks[1],
            wide_h: oh,
            wide_w: ow,
            narrow_channels: ks[0],
            narrow_h: xs[2],
            narrow_w: xs[3],
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
        };
        geom.validate()?;
        let mut out = kernels::corr_adjoint(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
        );
        let bias_data = self.value(bias).data();
        for sample in out.chunks_exact_mut(geom.wide_len()) {
            for (plane, &b) in sample.chunks_exact_mut(oh * ow).zip(bias_data) {
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
        check_finite("conv_transpose2d", &out)?;
        let value = Tensor::new(vec![geom.batch, geom.wide_channels, oh, ow], out)?;
        let needs = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            needs,
        ))
    }

    /// `input[N, F_in] * weight[F_out, F_in]^T + bias[F_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (n, f_in, f_out) = (xs[0], xs[1], ws[0]);
        let mut weight_t = vec![0.0; f_in * f_out];
        kernels::transpose(f_out, f_in, self.value(weight).data(), &mut weight_t);
        let mut out = vec![0.0; n * f_out];
        kernels::gemm_acc(n, f_in, f_out, self.value(input).data(), &weight_t, &mut out);
        let bias_data = self.value(bias).data();
        for row in out.chunks_exact_mut(f_out) {
            row.iter_mut().zip(bias_data).for_each(|(v, b)| *v += b);
        }
        check_finite("linear", &out)?;
        let value = Tensor::new(vec![n, f_out], out)?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Relu(input), needs))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
        check_finite("sigmoid", &data)?;
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Sigmoid(input), needs))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Reshape(input), needs))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).data().iter().sum::<f64>();
        check_finite("sum", &[total])?;
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(input), needs))
    }

    /// Mean over all elements of the squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let loss = total / n;
        check_finite("mse_loss", &[loss])?;
        let needs = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, needs))
    }

    /// Propagates d(loss)/d(node) back to every tracked leaf.
    ///
    /// Leaf gradients are added to whatever the leaves already hold, so
    /// calling this twice without clearing doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let mut send = |var: Var, delta: Vec<f64>, nodes: &[Node]| {
                if !nodes[var.0].needs_grad {
                    return;
                }
                match &mut grads[var.0] {
                    Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match node.op.clone() {
                Op::Leaf => {
                    if node.value.is_tracked() {
                        self.nodes[id].value.accumulate_grad(&upstream)?;
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let nodes = &self.nodes;
                    if nodes[input.0].needs_grad {
                        let dx = kernels::corr_adjoint(&geom, &upstream, nodes[kernel.0].value.data());
                        send(input, dx, nodes);
                    }
                    if nodes[kernel.0].needs_grad {
                        let dk = kernels::corr_kernel_grad(&geom, nodes[input.0].value.data(), &upstream);
                        send(kernel, dk, nodes);
                    }
                    if nodes[bias.0].needs_grad {
                        let db = kernels::channel_sums(
                            geom.batch,
                            geom.narrow_channels,
                            geom.positions(),
                            &upstream,
                        );
                        send(bias, db, nodes);
                    }
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let nodes = &self.nodes;
                    if nodes[input.0].needs_grad {
                        let dx = kernels::corr_forward(&geom, &upstream, nodes[kernel.0].value.data());
                        send(input, dx, nodes);
                    }
                    if nodes[kernel.0].needs_grad {
                        let dk = kernels::corr_kernel_grad(&geom, &upstream, nodes[input.0].value.data());
                        send(kernel, dk, nodes);
                    }
                    if nodes[bias.0].needs_grad {
                        let db = kernels::channel_sums(
                            geom.batch,
                            geom.wide_channels,
                            geom.wide_h * geom.wide_w,
                            &upstream,
                        );
                        send(bias, db, nodes);
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let nodes = &self.nodes;
                    let xs = nodes[input.0].value.shape();
                    let (n, f_in) = (xs[0], xs[1]);
                    let f_out = nodes[weight.0].value.shape()[0];
                    if nodes[input.0].needs_grad {
                        let mut dx = vec![0.0; n * f_in];
                        kernels::gemm_acc(n, f_out, f_in, &upstream, nodes[weight.0].value.data(), &mut dx);
                        send(input, dx, nodes);
                    }
                    if nodes[weight.0].needs_grad {
                        let mut up_t = vec![0.0; n * f_out];
                        kernels::transpose(n, f_out, &upstream, &mut up_t);
                        let mut dw = vec![0.0; f_out * f_in];
                        kernels::gemm_acc(f_out, n, f_in, &up_t, nodes[input.0].value.data(), &mut dw);
                        send(weight, dw, nodes);
                    }
                    if nodes[bias.0].needs_grad {
                        let db = kernels::channel_sums(n, f_out, 1, &upstream);
                        send(bias, db, nodes);
                    }
                }
                Op::Relu(input) => {
                    let nodes = &self.nodes;
                    let dx = nodes[input.0]
                        .value
                        .data()
                        .iter()
                        .zip(&upstream)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    send(input, dx, nodes);
                }
                Op::Sigmoid(input) => {
                    let nodes = &self.nodes;
                    let dx = nodes[id]
                        .value
                        .data()
                        .iter()
                        .zip(&upstream)
                        .map(|(&y, &g)| g * y * (1.0 - y))
                        .collect();
                    send(input, dx, nodes);
                }
                Op::Reshape(input) => send(input, upstream, &self.nodes),
                Op::Sum(input) => {
                    let nodes = &self.nodes;
                    let dx = vec![upstream[0]; nodes[input.0].value.numel()];
                    send(input, dx, nodes);
                }
                Op::Mse { pred, target } => {
                    let nodes = &self.nodes;
                    let (p, t) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
                    let scale = 2.0 * upstream[0] / p.len() as f64;
                    let dp: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                    if nodes[target.0].needs_grad {
                        send(target, dp.iter().map(|v| -v).collect(), nodes);
                    }
                    send(pred, dp, nodes);
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let x = tape.constant(t(&[1, 1, 3, 3], &data));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn ones_kernel_sums_the_window() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn transpose_broadcasts_single_pixel() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[5.0]));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv_transpose2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[5.0; 4]);
    }

    #[test]
    fn conv_rejects_oversized_kernel_and_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(Error::Shape { .. })));
        let k2 = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(matches!(tape.conv2d(x, k2, b, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_by_hand() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t(&[1, 2], &[3.0, 4.0]));
        let b = tape.constant(t(&[1], &[5.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[16.0]);

        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]).tracked());
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        // relu'(0) is 0
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1], &[0.0]).tracked());
        let y = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[0.25]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[2], &[-800.0, 800.0]));
        let y = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 1.0]);
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
        let b = tape.constant(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
        let l = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(l).item(), Some(0.0));
    }

    #[test]
    fn sum_and_mse_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).tracked());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[2.0]).tracked());
        let zero = tape.constant(t(&[1], &[0.0]));
        let l = tape.mse_loss(x, zero).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]).tracked());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).tracked());
        let r = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(r), Err(Error::Usage(_))));
    }

    #[test]
    fn fan_out_gradients_add_up() {
        // loss = (sum(relu(x)) - sum(x))^2, x feeds both branches.
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[-1.0, 0.5, 2.0]).tracked());
        let r = tape.relu(x).unwrap();
        let w = tape.constant(t(&[1, 3], &[1.0, 1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let a = tape.linear(r, w, b).unwrap();
        let c = tape.linear(x, w, b).unwrap();
        let loss = tape.mse_loss(a, c).unwrap();
        assert_eq!(tape.value(loss).item(), Some(1.0));
        tape.backward(loss).unwrap();
        // 2(a - c) * (1[x > 0] - 1)
        assert_eq!(tape.grad(x).unwrap(), &[-2.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_inputs_are_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[f64::INFINITY, 1.0]));
        let w = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        assert!(matches!(tape.linear(x, w, b), Err(Error::Numeric { .. })));
    }
}
