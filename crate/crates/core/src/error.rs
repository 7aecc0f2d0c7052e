use thiserror::Error;

/// Configuration and model-construction failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid physical config: {0}")]
    Physical(String),
    #[error("invalid spectrum: {0}")]
    Spectrum(String),
    #[error("invalid scheme config: {0}")]
    Scheme(String),
    #[error("invalid detector model: {0}")]
    Detector(String),
    #[error("degenerate bias: zero bias order combined with zero post-selection angle")]
    DegenerateBias,
    #[error("post-selected distribution is extinguished everywhere on the grid")]
    Extinguished,
}

/// Failures while evaluating Fisher information.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FisherError {
    #[error("non-finite Fisher information at electron count {count} (probability floor hit with a nonzero derivative)")]
    FloorHit { count: usize },
    #[error("pixel {pixel}: {source}")]
    Pixel {
        pixel: usize,
        #[source]
        source: Box<FisherError>,
    },
    #[error("derivative step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}
