//! Marching-cubes geometry extraction (to be filled in).
