use super::graph::{Graph, ParamBinding, Var};
use super::params::{Init, ParameterStore};
use super::tensor::TensorError;

/// Descriptor of a 2-D convolution layer whose weights live in a
/// [`ParameterStore`] under `{name}.weight` / `{name}.bias`.
///
/// Kernels are odd-sized; `same_padding` keeps the spatial mapping identical
/// for any dilation via `padding = dilation * (k - 1) / 2`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvLayer {
    /// 3x3 (or any odd k) convolution preserving spatial dims.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self::same_dilated(name, in_ch, out_ch, kernel, 1)
    }

    pub fn same_dilated(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    /// 1x1 pointwise convolution.
    pub fn pointwise(name: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Register weight and bias: Kaiming fan-in normal and zeros.
    pub fn register(&self, store: &mut ParameterStore) -> Result<(), TensorError> {
        store.register(
            &self.weight_name(),
            [self.out_ch, self.in_ch, self.kernel, self.kernel],
            Init::KaimingNormal {
                fan_in: self.in_ch * self.kernel * self.kernel,
            },
        )?;
        store.register(&self.bias_name(), [1, self.out_ch, 1, 1], Init::Zeros)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        input: Var,
        binding: &ParamBinding,
        store: &ParameterStore,
    ) -> Result<Var, TensorError> {
        let w = binding.var(store, &self.weight_name())?;
        let b = binding.var(store, &self.bias_name())?;
        g.conv2d(input, w, b, self.stride, self.padding, self.dilation)
    }

    /// Multiply-accumulates for one forward pass over an `out_h x out_w`
    /// output (one MAC per kernel tap per output element; bias not counted).
    pub fn mac_count(&self, out_h: usize, out_w: usize) -> u64 {
        (self.out_ch * self.in_ch * self.kernel * self.kernel * out_h * out_w) as u64
    }
}
