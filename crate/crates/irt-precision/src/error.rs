use thiserror::Error;

/// Errors produced by model construction, estimation, and reliability computation.
#[derive(Debug, Error)]
pub enum IrtError {
    #[error("item {item}: category count must be at least 2, got {k}")]
    TooFewCategories { item: usize, k: usize },

    #[error("item {item}: intercepts must be strictly decreasing, violated at position {pos} ({lo} >= {hi})")]
    InterceptOrdering {
        item: usize,
        pos: usize,
        lo: f64,
        hi: f64,
    },

    #[error("item {item}: non-finite parameter value")]
    NonFiniteParameter { item: usize },

    #[error("category index {k} out of range for item {item} with {categories} categories")]
    CategoryRange {
        item: usize,
        k: usize,
        categories: usize,
    },

    #[error("response pattern has {got} entries, model has {expected} items")]
    PatternLength { got: usize, expected: usize },

    #[error("parameter vector has length {got}, model layout requires {expected}")]
    VectorLength { got: usize, expected: usize },

    #[error("quadrature grid: {0}")]
    Quadrature(String),

    #[error("item {item} is degenerate: all {n} responses fall in category {category}")]
    DegenerateItem {
        item: usize,
        n: usize,
        category: usize,
    },

    #[error("information matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    SingularInformation { min_eigenvalue: f64 },

    #[error("degenerate moments: {0}")]
    DegenerateMoments(String),

    #[error("estimation did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("pattern enumeration would require {patterns:.3e} patterns, exceeding the cap of {cap:.3e}; use Monte Carlo mode")]
    EnumerationCap { patterns: f64, cap: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("row {row}, column {column} ({item}): {message}")]
    DataCell {
        row: usize,
        column: usize,
        item: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IrtError>;
