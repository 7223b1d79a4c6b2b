//! Service behind the blinded reader study: seeded real/synthetic item
//! order, judgments logged append-only per session, PNG slice renderings and
//! the per-modality misclassification report.

pub mod api;
pub mod error;
pub mod render;
pub mod session;
pub mod store;

pub use api::{router, serve, AppState};
pub use error::ReviewError;
pub use render::View;
pub use session::{
    misclassification_pct, ImageRef, Item, Judgment, ModalityRow, Origin, ReviewReport, ReviewSession,
    IDEAL_MISCLASSIFICATION_PCT,
};
pub use store::SessionStore;
