//! Two-stage detector alignment (to be filled in).
