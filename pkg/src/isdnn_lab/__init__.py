"""Deep-unfolded channel estimation for massive MIMO.

Submodules
----------
composite   complex <-> real block algebra
rng         seeded, stream-addressable random source
channel     Rayleigh / line-of-sight channels and array geometry
airsim      16-QAM pilots, AWGN, dataset generation and persistence
baselines   LS, diagonal init, MMSE, plain PGD, NMSE metrics
network     ISDNN / S-ISDNN forward pass and parameter container
train       loss, reverse-mode gradients, Adam, early-stopping loop
bench       SNR sweeps, timing and report emission
cli         ``isdnn-lab`` command line
"""

__version__ = "0.1.0"
