//! On-disk formats: HSC cubes, KRN kernels, SRF and loss CSVs.

mod hsc;
mod text;

pub use hsc::{decode_hsc, encode_hsc, read_hsc, write_hsc, HSC_MAGIC};
pub use text::{
    parse_kernel, parse_srf, read_kernel, read_loss_csv, read_srf, write_kernel, write_loss_csv,
    write_psnr_csv, write_sam_csv, write_srf, SRF_RENORM_LIMIT,
};

use std::path::Path;

use crate::error::Error;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}
