"""diffrecon: joint MRI reconstruction and coil sensitivity estimation.

Reconstructs an image and the coil sensitivity maps from sub-sampled
multi-coil k-space by interleaving reverse-diffusion sampling with
data-consistency gradient steps and a spectral smoothing prox on the maps.
"""

__version__ = "0.1.0"
