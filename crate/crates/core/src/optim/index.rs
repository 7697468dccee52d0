use crate::tensor::SparseTensor;

/// Entry positions grouped by their index along one mode (CSR layout).
#[derive(Debug, Clone)]
pub(crate) struct ModeIndex {
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl ModeIndex {
    pub(crate) fn build(x: &SparseTensor, mode: usize) -> Self {
        let rows = x.dims()[mode];
        let mut offsets = vec![0usize; rows + 1];
        for e in 0..x.nnz() {
            offsets[x.index(e)[mode] + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut fill = offsets.clone();
        let mut entries = vec![0usize; x.nnz()];
        for e in 0..x.nnz() {
            let r = x.index(e)[mode];
            entries[fill[r]] = e;
            fill[r] += 1;
        }
        ModeIndex { offsets, entries }
    }

    pub(crate) fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub(crate) fn row(&self, r: usize) -> &[usize] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// One [`ModeIndex`] per mode of a tensor.
#[derive(Debug, Clone)]
pub(crate) struct TensorIndex {
    modes: Vec<ModeIndex>,
}

impl TensorIndex {
    pub(crate) fn build(x: &SparseTensor) -> Self {
        TensorIndex {
            modes: (0..x.order()).map(|n| ModeIndex::build(x, n)).collect(),
        }
    }

    pub(crate) fn mode(&self, n: usize) -> &ModeIndex {
        &self.modes[n]
    }
}
