//! Case-file I/O: the MATPOWER text format, the OLTC sidecar, template
//! bundles and the exporter registry.

mod bundle;
mod convert;
mod export;
pub mod matpower;

use thiserror::Error;

pub use bundle::{load_bundle, render_meta, write_bundle, BundleMeta, CaseBundle, RootImpedance};
pub use convert::{from_network, to_network, OltcAnnotation, OltcAnnotations};
pub use export::{
    DirSink, ExportSink, Exporter, ExporterRegistry, FlatExporter, MatpowerExporter, MemorySink,
};
pub use matpower::{emit_case, format_number, parse_case, CaseDocument, Matrix, RawStatement};

#[derive(Debug, Error)]
pub enum CaseIoError {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("malformed case: {0}")]
    Structure(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("annotation: {0}")]
    Annotation(String),
    #[error("unknown exporter `{name}` (registered: {})", registered.join(", "))]
    UnknownExporter { name: String, registered: Vec<String> },
}

impl CaseIoError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CaseIoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
