// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

pub mod error;
pub mod griffiths;
pub mod harness;
pub mod hcma;
pub mod quantize;
pub mod sweep;
pub mod toric;

pub use error::{Error, Result};
