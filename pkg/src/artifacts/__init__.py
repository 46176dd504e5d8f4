"""JSON / CSV artifacts of menuconnect runs"""
