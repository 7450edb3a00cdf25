//! 2-D projection of embeddings and the CSV/SVG files built from it.

mod export;
mod svg;
mod tsne;

pub use export::{
    embeddings_csv, export_embeddings_csv, parse_export_csv, tsne_csv, write_file, ParsedExport,
};
pub use svg::{bar_svg, render_bar_svg, render_scatter_svg, scatter_svg, PALETTE};
pub use tsne::{conditional_row, tsne, TsneConfig, TsneResult, MAX_POINTS};
