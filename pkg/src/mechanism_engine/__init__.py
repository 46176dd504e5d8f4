"""
menuconnect mechanism engine
RochetNet and unit-weight AMA menus, softmax training and low-loss paths between menus
"""
