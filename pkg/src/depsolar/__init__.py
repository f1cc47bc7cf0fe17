"""Dependable networked solar-tracker control: MPC, duty/standby failover and PV yield."""

__version__ = "0.1.0"
