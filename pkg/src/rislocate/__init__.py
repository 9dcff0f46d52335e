"""RIS-assisted near-field localization: channels, beamforming, bounds and estimators."""
