"""terragan: two-stage GAN pipeline for procedural terrain.

Stage 1 maps latent noise to heightmaps; stage 2 translates heightmaps to
RGB textures. Includes the satellite-imagery tiling pipeline, a
diamond-square baseline, latent-space tooling, and game-engine export.
"""

__version__ = "0.1.0"
