pub mod asymptotics;
pub mod bands;
pub mod config;
pub mod dispersion;
pub mod eigen;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod linalg;
pub mod operator;
pub mod oracle;
pub mod par;
pub mod quadrature;
pub mod report;
pub mod roots;
pub mod special;
pub mod validation;
